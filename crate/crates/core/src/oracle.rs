//! Independent spectral reference solver.
//!
//! On the periodic unit cell the generator of the diffusion,
//! `L = b·∇ + (1/2) a : ∇²` with `a = sigma sigma^T`, is discretized by
//! Fourier collocation on a uniform grid (`M` points per dimension,
//! `x_j = j/M`).  Because the quadrature weights are uniform, the matrix
//! transpose of the discrete generator is exactly the discrete
//! Fokker–Planck operator, so
//!
//! * the stationary density solves `L^T f = 0`, normalized to unit mass,
//! * the centered Poisson problem `-L theta_hat = theta - mu(theta)` with
//!   `mu(theta_hat) = 0` yields the response
//!   `rho = mu(F · ∇theta_hat)`,
//! * a finite-difference cross-check perturbs the drift by `±eps F` and
//!   differentiates the stationary average directly, and
//! * a Crank–Nicolson evolution of the density from the uniform start
//!   provides finite-horizon expectations `E[theta(X_t)]`.
//!
//! Everything here is deterministic dense linear algebra, sharing no code
//! path with the Monte Carlo estimators it validates.

use crate::error::{Error, Result};
use crate::model::{Diffusion, Problem};
use crate::scalar::Real;
use nalgebra::{DMatrix, DVector, RealField};

/// `num_traits::Float` method wrappers; avoids method-resolution clashes
/// between `Float` and `RealField` for types implementing both.
#[inline]
fn fabs<T: Real>(x: T) -> T {
    num_traits::Float::abs(x)
}
#[inline]
fn fmax<T: Real>(a: T, b: T) -> T {
    num_traits::Float::max(a, b)
}

/// First-derivative Fourier collocation matrix for period-1 functions
/// sampled at `x_j = j/M` (`M` even).
pub fn diff_matrix<T: Real + RealField>(m: usize) -> DMatrix<T> {
    assert!(m >= 4 && m % 2 == 0, "grid size must be even and >= 4");
    let pi = std::f64::consts::PI;
    DMatrix::from_fn(m, m, |j, k| {
        if j == k {
            T::zero()
        } else {
            let r = j as i64 - k as i64;
            let sign = if r % 2 == 0 { 1.0 } else { -1.0 };
            let angle = pi * r as f64 / m as f64;
            T::of(pi * sign / angle.tan())
        }
    })
}

/// Second-derivative Fourier collocation matrix for period-1 functions.
pub fn diff2_matrix<T: Real + RealField>(m: usize) -> DMatrix<T> {
    assert!(m >= 4 && m % 2 == 0, "grid size must be even and >= 4");
    let pi = std::f64::consts::PI;
    let h = 2.0 * pi / m as f64;
    let scale = (2.0 * pi) * (2.0 * pi);
    DMatrix::from_fn(m, m, |j, k| {
        if j == k {
            T::of(scale * (-pi * pi / (3.0 * h * h) - 1.0 / 6.0))
        } else {
            let r = j as i64 - k as i64;
            let sign = if r % 2 == 0 { 1.0 } else { -1.0 };
            let s = (r as f64 * h / 2.0).sin();
            T::of(scale * (-sign / (2.0 * s * s)))
        }
    })
}

/// Grid coordinates in row-major index order (`idx = i*M + j` in 2D).
pub fn grid_points<T: Real>(m: usize, dim: usize) -> Vec<Vec<T>> {
    let n = m.pow(dim as u32);
    (0..n)
        .map(|idx| {
            let mut x = vec![T::zero(); dim];
            let mut rem = idx;
            for k in (0..dim).rev() {
                x[k] = T::of((rem % m) as f64 / m as f64);
                rem /= m;
            }
            x
        })
        .collect()
}

/// Discrete generator `L` acting on grid samples of a function, with the
/// drift shifted by `shift * F` (zero shift gives the nominal generator).
pub fn build_generator_shifted<T: Real + RealField>(
    p: &Problem<T>,
    m: usize,
    shift: T,
) -> Result<DMatrix<T>> {
    let d = p.dim;
    if d > 2 {
        return Err(Error::Validation(
            "spectral reference supports dimensions 1 and 2".into(),
        ));
    }
    let pts = grid_points::<T>(m, d);
    let n = pts.len();
    let mut bvals = vec![T::zero(); n * d];
    {
        let mut b = vec![T::zero(); d];
        let mut f = vec![T::zero(); d];
        for (idx, x) in pts.iter().enumerate() {
            (p.drift)(x, &mut b);
            (p.forcing)(x, &mut f);
            for k in 0..d {
                bvals[idx * d + k] = b[k] + shift * f[k];
            }
        }
    }
    let d1 = diff_matrix::<T>(m);
    let d2 = diff2_matrix::<T>(m);
    let half = T::of(0.5);

    if d == 1 {
        let mut l = DMatrix::<T>::zeros(n, n);
        for j in 0..n {
            let a = match &p.diffusion {
                Diffusion::Scalar1d { sigma, .. } => {
                    let s = sigma(pts[j][0]);
                    s * s
                }
                Diffusion::ConstMatrix { sigma, .. } => sigma[0] * sigma[0],
            };
            for k in 0..n {
                l[(j, k)] = bvals[j] * d1[(j, k)] + half * a * d2[(j, k)];
            }
        }
        return Ok(l);
    }

    // d == 2: constant-matrix diffusion required.
    let a = match &p.diffusion {
        Diffusion::ConstMatrix { sigma, .. } => {
            let mut a = [T::zero(); 4];
            for i in 0..2 {
                for j in 0..2 {
                    let mut acc = T::zero();
                    for k in 0..2 {
                        acc += sigma[i * 2 + k] * sigma[j * 2 + k];
                    }
                    a[i * 2 + j] = acc;
                }
            }
            a
        }
        Diffusion::Scalar1d { .. } => unreachable!("validated problems pair dim with diffusion"),
    };
    let eye = DMatrix::<T>::identity(m, m);
    let dx = d1.kronecker(&eye);
    let dy = eye.kronecker(&d1);
    let dxx = d2.kronecker(&eye);
    let dyy = eye.kronecker(&d2);
    let dxy = d1.kronecker(&d1);
    let mut l = DMatrix::<T>::zeros(n, n);
    for j in 0..n {
        let (b1, b2) = (bvals[j * 2], bvals[j * 2 + 1]);
        for k in 0..n {
            l[(j, k)] = b1 * dx[(j, k)]
                + b2 * dy[(j, k)]
                + half * a[0] * dxx[(j, k)]
                + half * a[3] * dyy[(j, k)]
                + a[1] * dxy[(j, k)];
        }
    }
    Ok(l)
}

/// Discrete generator with the nominal drift.
pub fn build_generator<T: Real + RealField>(p: &Problem<T>, m: usize) -> Result<DMatrix<T>> {
    build_generator_shifted(p, m, T::zero())
}

fn residual_tol<T: Real>() -> T {
    fmax(T::of(1e-8), T::of(100.0) * T::epsilon())
}

/// Least squares solve of the stacked system `[A; w c^T] x = [b; w g]`
/// via QR, where the extra row imposes a scalar constraint `c^T x = g`
/// scaled to the magnitude of `A`.
fn solve_constrained<T: Real + RealField>(
    a: &DMatrix<T>,
    b: &DVector<T>,
    c: &DVector<T>,
    g: T,
) -> Result<DVector<T>> {
    let n = a.ncols();
    let mut w = T::zero();
    for v in a.iter() {
        w = fmax(w, fabs(*v));
    }
    let mut stacked = DMatrix::<T>::zeros(n + 1, n);
    stacked.view_mut((0, 0), (n, n)).copy_from(a);
    for k in 0..n {
        stacked[(n, k)] = w * c[k];
    }
    let mut rhs = DVector::<T>::zeros(n + 1);
    rhs.rows_mut(0, n).copy_from(b);
    rhs[n] = w * g;
    let qr = stacked.qr();
    qr.q_tr_mul(&mut rhs);
    let top = DVector::from(rhs.rows(0, n).clone_owned());
    let r = qr.r();
    r.solve_upper_triangular(&top)
        .ok_or_else(|| Error::Numerical("rank-deficient spectral system".into()))
}

/// Stationary density on the grid (mass-one, positive), given the
/// generator `L`.  Solves `L^T f = 0` with `(1/n) sum f = 1`.
pub fn stationary_density<T: Real + RealField>(l: &DMatrix<T>) -> Result<DVector<T>> {
    let n = l.ncols();
    let lt = l.transpose();
    let ones = DVector::from_element(n, T::one() / T::of_usize(n));
    let zero_rhs = DVector::zeros(n);
    let mut f = solve_constrained(&lt, &zero_rhs, &ones, T::one())?;

    // Exact mass renormalization, then invariant checks.
    let mass: T = f.iter().copied().sum::<T>() / T::of_usize(n);
    f /= mass;
    let res = &lt * &f;
    let mut rmax = T::zero();
    let mut fmax_v = T::zero();
    let mut fmin = T::infinity();
    for j in 0..n {
        rmax = fmax(rmax, fabs(res[j]));
        fmax_v = fmax(fmax_v, fabs(f[j]));
        fmin = num_traits::Float::min(fmin, f[j]);
    }
    let mut lscale = T::zero();
    for v in lt.iter() {
        lscale = fmax(lscale, fabs(*v));
    }
    if rmax > residual_tol::<T>() * lscale * fmax_v {
        return Err(Error::Numerical(format!(
            "stationary density residual too large: {rmax:?}"
        )));
    }
    if fmin <= T::zero() {
        return Err(Error::Numerical(format!(
            "stationary density not positive: min {fmin:?}"
        )));
    }
    Ok(f)
}

/// Centered Poisson solve: `-L theta_hat = theta - mu(theta)` subject to
/// `mu(theta_hat) = 0`.  Returns `(theta_hat, mu_theta)`.
pub fn poisson_solve<T: Real + RealField>(
    l: &DMatrix<T>,
    density: &DVector<T>,
    theta_vals: &DVector<T>,
) -> Result<(DVector<T>, T)> {
    let n = l.ncols();
    let ninv = T::one() / T::of_usize(n);
    let mu_theta: T = theta_vals
        .iter()
        .zip(density.iter())
        .map(|(&t, &f)| t * f)
        .sum::<T>()
        * ninv;
    let neg_l = -l.clone();
    let rhs = theta_vals.map(|t| t - mu_theta);
    let weight_vec = density.map(|f| f * ninv);
    let theta_hat = solve_constrained(&neg_l, &rhs, &weight_vec, T::zero())?;

    let res = &neg_l * &theta_hat - &rhs;
    let mut rmax = T::zero();
    let mut tmax = T::zero();
    for j in 0..n {
        rmax = fmax(rmax, fabs(res[j]));
        tmax = fmax(tmax, fabs(theta_vals[j]));
    }
    if rmax > residual_tol::<T>() * fmax(T::one(), tmax) {
        return Err(Error::Numerical(format!(
            "Poisson residual too large: {rmax:?}"
        )));
    }
    Ok((theta_hat, mu_theta))
}

/// Complete reference solution for one problem at resolution `m`.
pub struct ReferenceSolution<T: Real + RealField> {
    pub m: usize,
    pub dim: usize,
    /// Stationary density samples (mass one).
    pub density: DVector<T>,
    /// Centered Poisson solution samples.
    pub theta_hat: DVector<T>,
    /// Stationary average of the observable.
    pub mu_theta: T,
    /// Linear response of the stationary average to the forcing.
    pub rho: T,
}

/// Default spectral resolution per dimension.
pub fn default_resolution(dim: usize) -> usize {
    match dim {
        1 => 128,
        _ => 48,
    }
}

/// Solve the stationary, Poisson, and response problems at resolution `m`.
pub fn solve_reference<T: Real + RealField>(
    p: &Problem<T>,
    m: usize,
) -> Result<ReferenceSolution<T>> {
    let d = p.dim;
    let l = build_generator(p, m)?;
    let density = stationary_density(&l)?;
    let pts = grid_points::<T>(m, d);
    let n = pts.len();
    let theta_vals = DVector::from_iterator(n, pts.iter().map(|x| p.theta(x)));
    let (theta_hat, mu_theta) = poisson_solve(&l, &density, &theta_vals)?;

    // rho = mu(F · ∇theta_hat), with the gradient taken spectrally.
    let d1 = diff_matrix::<T>(m);
    let mut grads: Vec<DVector<T>> = Vec::with_capacity(d);
    if d == 1 {
        grads.push(&d1 * &theta_hat);
    } else {
        let eye = DMatrix::<T>::identity(m, m);
        grads.push(d1.kronecker(&eye) * &theta_hat);
        grads.push(eye.kronecker(&d1) * &theta_hat);
    }
    let mut rho = T::zero();
    {
        let mut f = vec![T::zero(); d];
        for (j, x) in pts.iter().enumerate() {
            (p.forcing)(x, &mut f);
            let mut fdot = T::zero();
            for k in 0..d {
                fdot += f[k] * grads[k][j];
            }
            rho += density[j] * fdot;
        }
        rho /= T::of_usize(n);
    }
    Ok(ReferenceSolution {
        m,
        dim: d,
        density,
        theta_hat,
        mu_theta,
        rho,
    })
}

/// Scalar health indicators of a reference solve, for reporting.
#[derive(Debug, Clone)]
pub struct ReferenceDiagnostics<T> {
    pub m: usize,
    pub rho: T,
    pub mu_theta: T,
    /// `max |L^T f|` over the grid.
    pub stationary_residual: T,
    /// `max |-L theta_hat - (theta - mu)|` over the grid.
    pub poisson_residual: T,
    pub density_min: T,
}

/// Solve the reference problem and report residual diagnostics alongside
/// the response value.
pub fn reference_diagnostics<T: Real + RealField>(
    p: &Problem<T>,
    m: usize,
) -> Result<ReferenceDiagnostics<T>> {
    let r = solve_reference(p, m)?;
    let l = build_generator(p, m)?;
    let pts = grid_points::<T>(m, p.dim);
    let n = pts.len();
    let theta_vals = DVector::from_iterator(n, pts.iter().map(|x| p.theta(x)));

    let sres = l.transpose() * &r.density;
    let mut stationary_residual = T::zero();
    let mut density_min = T::infinity();
    for j in 0..n {
        stationary_residual = fmax(stationary_residual, fabs(sres[j]));
        density_min = num_traits::Float::min(density_min, r.density[j]);
    }
    let pres = -(&l * &r.theta_hat) - theta_vals.map(|t| t - r.mu_theta);
    let mut poisson_residual = T::zero();
    for j in 0..n {
        poisson_residual = fmax(poisson_residual, fabs(pres[j]));
    }
    Ok(ReferenceDiagnostics {
        m,
        rho: r.rho,
        mu_theta: r.mu_theta,
        stationary_residual,
        poisson_residual,
        density_min,
    })
}

/// Stationary average of the observable under the drift `b + shift * F`.
fn stationary_average_shifted<T: Real + RealField>(
    p: &Problem<T>,
    m: usize,
    shift: T,
) -> Result<T> {
    let l = build_generator_shifted(p, m, shift)?;
    let f = stationary_density(&l)?;
    let pts = grid_points::<T>(m, p.dim);
    let n = pts.len();
    let avg: T = pts
        .iter()
        .enumerate()
        .map(|(j, x)| p.theta(x) * f[j])
        .sum::<T>()
        / T::of_usize(n);
    Ok(avg)
}

/// Central finite-difference response: perturb the drift by `±eps F` and
/// differentiate the stationary average.
pub fn response_fd<T: Real + RealField>(p: &Problem<T>, m: usize, eps: T) -> Result<T> {
    if eps <= T::zero() {
        return Err(Error::Validation(format!(
            "finite-difference step must be positive, got {eps:?}"
        )));
    }
    let plus = stationary_average_shifted(p, m, eps)?;
    let minus = stationary_average_shifted(p, m, -eps)?;
    Ok((plus - minus) / (T::of(2.0) * eps))
}

/// `E[theta(X_t)]` for a trajectory started from the uniform distribution,
/// by Crank–Nicolson evolution of the density with automatic time-step
/// refinement to an absolute tolerance of `1e-9`.
pub fn time_evolved_expectation<T: Real + RealField>(
    p: &Problem<T>,
    m: usize,
    t_final: f64,
    dt_initial: f64,
) -> Result<T> {
    if t_final <= 0.0 || dt_initial <= 0.0 {
        return Err(Error::Validation(
            "time horizon and step must be positive".into(),
        ));
    }
    let lstar = build_generator(p, m)?.transpose();
    let pts = grid_points::<T>(m, p.dim);
    let n = pts.len();
    let theta_vals = DVector::from_iterator(n, pts.iter().map(|x| p.theta(x)));

    let evolve = |dt_req: f64| -> Result<T> {
        let steps = (t_final / dt_req).round().max(1.0) as usize;
        let dt = T::of(t_final / steps as f64);
        let half_dt = dt * T::of(0.5);
        let a = DMatrix::<T>::identity(n, n) - &lstar * half_dt;
        let b = DMatrix::<T>::identity(n, n) + &lstar * half_dt;
        let lu = a.lu();
        let mut f = DVector::from_element(n, T::one());
        for _ in 0..steps {
            let rhs = &b * &f;
            f = lu
                .solve(&rhs)
                .ok_or_else(|| Error::Numerical("singular Crank-Nicolson system".into()))?;
        }
        Ok(theta_vals.dot(&f) / T::of_usize(n))
    };

    let mut dt = dt_initial.min(t_final);
    let mut prev = evolve(dt)?;
    for _ in 0..20 {
        dt /= 2.0;
        let next = evolve(dt)?;
        if fabs(next - prev) <= T::of(1e-9) {
            return Ok(next);
        }
        prev = next;
    }
    Err(Error::Numerical(
        "time evolution did not converge under step refinement".into(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::make_problem;
    use std::f64::consts::PI;

    #[test]
    fn derivative_matrices_are_spectrally_exact() {
        let m = 32;
        let d1 = diff_matrix::<f64>(m);
        let d2 = diff2_matrix::<f64>(m);
        let x: Vec<f64> = (0..m).map(|j| j as f64 / m as f64).collect();
        let f = DVector::from_iterator(m, x.iter().map(|&t| (2.0 * PI * t).sin()));
        let df = &d1 * &f;
        let ddf = &d2 * &f;
        for j in 0..m {
            let want1 = 2.0 * PI * (2.0 * PI * x[j]).cos();
            let want2 = -(2.0 * PI) * (2.0 * PI) * (2.0 * PI * x[j]).sin();
            assert!((df[j] - want1).abs() < 1e-8, "D1 error {}", df[j] - want1);
            assert!((ddf[j] - want2).abs() < 1e-7, "D2 error {}", ddf[j] - want2);
        }
    }

    #[test]
    fn generator_annihilates_constants() {
        for name in ["cosine1d", "mild1d"] {
            let p = make_problem::<f64>(name).unwrap();
            let l = build_generator(&p, 64).unwrap();
            let ones = DVector::from_element(64, 1.0);
            let r = &l * &ones;
            let scale = l.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
            for v in r.iter() {
                assert!(v.abs() <= 1e-12 * scale, "L 1 = {v}");
            }
        }
        let p = make_problem::<f64>("cosine2d").unwrap();
        let l = build_generator(&p, 16).unwrap();
        let n = 16 * 16;
        let ones = DVector::from_element(n, 1.0);
        let r = &l * &ones;
        let scale = l.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
        for v in r.iter() {
            assert!(v.abs() <= 1e-12 * scale, "L 1 = {v}");
        }
    }

    #[test]
    fn gradient_drift_density_matches_gibbs() {
        // b = pi sin(2 pi x) = -V' with V = (cos(2 pi x))/2 and sigma^2 = 2,
        // so f ∝ exp(-cos(2 pi x)/2).
        let p = make_problem::<f64>("cosine1d").unwrap();
        let m = 128;
        let l = build_generator(&p, m).unwrap();
        let f = stationary_density(&l).unwrap();
        let unnorm: Vec<f64> = (0..m)
            .map(|j| (-(2.0 * PI * j as f64 / m as f64).cos() / 2.0).exp())
            .collect();
        let mass: f64 = unnorm.iter().sum::<f64>() / m as f64;
        for j in 0..m {
            let want = unnorm[j] / mass;
            assert!((f[j] - want).abs() < 1e-10, "f[{j}] = {} want {want}", f[j]);
        }
    }

    #[test]
    fn benchmark_reference_values() {
        let p = make_problem::<f64>("cosine1d").unwrap();
        let r = solve_reference(&p, 128).unwrap();
        // Odd observable under an even density: zero stationary average.
        assert!(r.mu_theta.abs() < 1e-12, "mu = {}", r.mu_theta);
        // Frozen response value, and resolution independence.
        assert!(
            (r.rho - (-0.11582426280557941)).abs() < 1e-10,
            "rho = {}",
            r.rho
        );
        let r2 = solve_reference(&p, 192).unwrap();
        assert!((r.rho - r2.rho).abs() < 1e-10);

        // Stationary average of cos(2 pi x) against the Bessel closed form.
        let mut q = make_problem::<f64>("cosine1d").unwrap();
        q.observable = Box::new(|x| (2.0 * PI * x[0]).cos());
        q.observable_grad = Box::new(|x, out| out[0] = -2.0 * PI * (2.0 * PI * x[0]).sin());
        let rq = solve_reference(&q, 128).unwrap();
        assert!(
            (rq.mu_theta - (-0.24249961258080197)).abs() < 1e-12,
            "mu(cos) = {}",
            rq.mu_theta
        );
    }

    #[test]
    fn constant_drift_poisson_matches_analytic() {
        // b = 1, sigma = 1, theta = sin(2 pi x): uniform density and
        // theta_hat = A sin + B cos with B = 1/(2 pi (1 + pi^2)), A = pi B.
        let p = make_problem::<f64>("const1d").unwrap();
        let m = 128;
        let r = solve_reference(&p, m).unwrap();
        for j in 0..m {
            assert!((r.density[j] - 1.0).abs() < 1e-11);
        }
        let aa = 0.045999834175187618;
        let bb = 0.014642201980777215;
        for j in 0..m {
            let x = j as f64 / m as f64;
            let want = aa * (2.0 * PI * x).sin() + bb * (2.0 * PI * x).cos();
            assert!(
                (r.theta_hat[j] - want).abs() < 1e-11,
                "theta_hat({x}) = {} want {want}",
                r.theta_hat[j]
            );
        }
        // Response = integral of theta_hat' over the period = 0.
        assert!(r.rho.abs() < 1e-12, "rho = {}", r.rho);
    }

    #[test]
    fn response_agrees_with_finite_difference() {
        let p = make_problem::<f64>("cosine1d").unwrap();
        let r = solve_reference(&p, 128).unwrap();
        let fd = response_fd(&p, 128, 1e-3).unwrap();
        let tol = 1e-5 * f64::max(1.0, r.rho.abs());
        assert!((r.rho - fd).abs() < tol, "rho {} fd {}", r.rho, fd);
    }

    #[test]
    fn two_dimensional_response_separates() {
        // cosine2d forces only the x coordinate of a product-form problem,
        // so its response equals the 1D benchmark value.
        let p2 = make_problem::<f64>("cosine2d").unwrap();
        let r2 = solve_reference(&p2, 32).unwrap();
        let p1 = make_problem::<f64>("cosine1d").unwrap();
        let r1 = solve_reference(&p1, 32).unwrap();
        assert!(
            (r2.rho - r1.rho).abs() < 1e-8,
            "2d rho {} vs 1d rho {}",
            r2.rho,
            r1.rho
        );
    }

    #[test]
    fn constant_observable_has_zero_poisson_solution() {
        let mut p = make_problem::<f64>("cosine1d").unwrap();
        p.observable = Box::new(|_| 4.2);
        p.observable_grad = Box::new(|_, out| out[0] = 0.0);
        let r = solve_reference(&p, 64).unwrap();
        for v in r.theta_hat.iter() {
            assert!(v.abs() < 1e-10);
        }
        assert!((r.mu_theta - 4.2).abs() < 1e-12);
        assert!(r.rho.abs() < 1e-12);
    }

    #[test]
    fn time_evolution_relaxes_to_stationary_average() {
        // mild1d at a long horizon: E[theta(X_T)] -> mu(theta).
        let p = make_problem::<f64>("mild1d").unwrap();
        let r = solve_reference(&p, 64).unwrap();
        let e = time_evolved_expectation(&p, 64, 30.0, 0.05).unwrap();
        assert!((e - r.mu_theta).abs() < 1e-8, "E = {e}, mu = {}", r.mu_theta);
        // Frozen finite-horizon value at T = 1 from the uniform start.
        let e1 = time_evolved_expectation(&p, 128, 1.0, 0.02).unwrap();
        assert!(
            (e1 - (-0.19126466352198826)).abs() < 1e-8,
            "E[theta(X_1)] = {e1}"
        );
    }

    #[test]
    fn adjoint_is_exact_transpose() {
        let p = make_problem::<f64>("cosine1d").unwrap();
        let l = build_generator(&p, 32).unwrap();
        let lt = l.transpose();
        // <L u, v> = <u, L^T v> holds to rounding for random-ish vectors.
        let u = DVector::from_iterator(32, (0..32).map(|j| ((j * j + 1) as f64 * 0.37).sin()));
        let v = DVector::from_iterator(32, (0..32).map(|j| ((j * 3 + 2) as f64 * 0.11).cos()));
        let lhs = (&l * &u).dot(&v);
        let rhs = u.dot(&(&lt * &v));
        let scale = l.iter().fold(0.0f64, |a, &x| a.max(x.abs()));
        assert!((lhs - rhs).abs() <= 1e-9 * scale.max(1.0), "{lhs} vs {rhs}");
    }
}
