//! SDE problems on the d-dimensional unit torus.
//!
//! A [`Problem`] bundles the coefficient fields of the dynamics
//! `dX = b(X) dt + sigma(X) dW`, the perturbation direction `F`, and the
//! observable `theta`, together with the analytic derivatives the
//! second-order scheme consumes every step (`∇b`, `∇²b`, and in 1D the
//! derivatives of `sigma`).  Derivatives are author-supplied closures rather
//! than automatic differentiation: the inner simulation loop calls them once
//! per step and must stay allocation-free.  [`validate_problem`] cross-checks
//! every supplied derivative against central finite differences and checks
//! positive-definiteness of the diffusion matrix and 1-periodicity of all
//! fields on a sample grid, reporting all failures instead of aborting.
//!
//! Diffusion comes in the two shapes the estimators support: a
//! state-dependent scalar in one dimension, or a constant invertible matrix
//! in any dimension.
//!
//! A small registry of named problems used throughout the test-suite and CLI
//! lives in [`make_problem`].

use std::f64::consts::PI;

use crate::error::{Error, Result, ValidationFailure, ValidationReport};
use crate::scalar::Real;

/// Scalar function of a scalar coordinate (1D diffusion fields).
pub type ScalarFn<T> = Box<dyn Fn(T) -> T + Send + Sync>;
/// Scalar field on the torus.
pub type FieldScalar<T> = Box<dyn Fn(&[T]) -> T + Send + Sync>;
/// Vector/matrix/tensor field on the torus, written into a caller buffer.
pub type FieldInto<T> = Box<dyn Fn(&[T], &mut [T]) + Send + Sync>;

/// Diffusion coefficient in the two supported shapes.
pub enum Diffusion<T: Real> {
    /// One-dimensional state-dependent scalar `sigma(x)` with its first two
    /// derivatives.
    Scalar1d {
        sigma: ScalarFn<T>,
        dsigma: ScalarFn<T>,
        d2sigma: ScalarFn<T>,
    },
    /// Constant matrix `sigma` (row-major `dim x dim`), with its inverse
    /// precomputed at construction.
    ConstMatrix {
        dim: usize,
        sigma: Vec<T>,
        inv: Vec<T>,
    },
}

impl<T: Real> Diffusion<T> {
    /// Constant scalar diffusion in one dimension.
    pub fn const_scalar_1d(value: f64) -> Self {
        let v = T::of(value);
        Diffusion::Scalar1d {
            sigma: Box::new(move |_| v),
            dsigma: Box::new(|_| T::zero()),
            d2sigma: Box::new(|_| T::zero()),
        }
    }

    /// Constant matrix diffusion; fails if the matrix is singular.
    pub fn const_matrix(dim: usize, sigma: Vec<T>) -> Result<Self> {
        if sigma.len() != dim * dim {
            return Err(Error::Validation(format!(
                "diffusion matrix has {} entries, expected {}",
                sigma.len(),
                dim * dim
            )));
        }
        let inv = invert_dense(dim, &sigma).ok_or_else(|| {
            Error::Validation("constant diffusion matrix is singular".into())
        })?;
        Ok(Diffusion::ConstMatrix { dim, sigma, inv })
    }

    /// Dimension this diffusion applies to (1 for the scalar case).
    pub fn dim(&self) -> usize {
        match self {
            Diffusion::Scalar1d { .. } => 1,
            Diffusion::ConstMatrix { dim, .. } => *dim,
        }
    }

    /// True when `sigma` does not depend on the state.
    pub fn is_constant(&self) -> bool {
        matches!(self, Diffusion::ConstMatrix { .. })
    }

    /// Fill `out` (row-major `d x d`) with `sigma(x)`.
    pub fn fill_sigma(&self, x: &[T], out: &mut [T]) {
        match self {
            Diffusion::Scalar1d { sigma, .. } => out[0] = sigma(x[0]),
            Diffusion::ConstMatrix { sigma, .. } => out.copy_from_slice(sigma),
        }
    }

    /// Compute `u = sigma(x)^{-1} f` into `out`.
    pub fn solve_u(&self, x: &[T], f: &[T], out: &mut [T]) -> Result<()> {
        match self {
            Diffusion::Scalar1d { sigma, .. } => {
                let s = sigma(x[0]);
                if s == T::zero() {
                    return Err(Error::Numerical(format!(
                        "singular diffusion sigma(x) = 0 at x = {:?}",
                        x[0]
                    )));
                }
                out[0] = f[0] / s;
                Ok(())
            }
            Diffusion::ConstMatrix { dim, inv, .. } => {
                for i in 0..*dim {
                    let mut acc = T::zero();
                    for j in 0..*dim {
                        acc += inv[i * dim + j] * f[j];
                    }
                    out[i] = acc;
                }
                Ok(())
            }
        }
    }
}

/// An SDE on the unit torus together with a perturbation direction and an
/// observable.  Immutable after construction; field evaluation is reentrant
/// and side-effect free, so a `Problem` is safely shared across workers.
///
/// Buffer layouts: `drift` fills `out[i] = b^i`; `drift_grad` fills
/// `out[i*d + j] = ∂_j b^i`; `drift_hess` fills
/// `out[(i*d + j)*d + k] = ∂_j ∂_k b^i`; `observable_grad` fills
/// `out[i] = ∂_i theta`.
pub struct Problem<T: Real> {
    pub name: String,
    pub dim: usize,
    pub drift: FieldInto<T>,
    pub drift_grad: FieldInto<T>,
    pub drift_hess: FieldInto<T>,
    pub diffusion: Diffusion<T>,
    pub forcing: FieldInto<T>,
    pub observable: FieldScalar<T>,
    pub observable_grad: FieldInto<T>,
}

impl<T: Real> Problem<T> {
    pub fn theta(&self, x: &[T]) -> T {
        (self.observable)(x)
    }

    /// 1D scalar diffusion values `(sigma, sigma', sigma'')` at `x`.
    /// Panics if the diffusion is a constant matrix (callers dispatch on the
    /// enum before using this).
    pub fn sigma_1d(&self, x: T) -> (T, T, T) {
        match &self.diffusion {
            Diffusion::Scalar1d {
                sigma,
                dsigma,
                d2sigma,
            } => (sigma(x), dsigma(x), d2sigma(x)),
            Diffusion::ConstMatrix { .. } => {
                panic!("sigma_1d called on a matrix diffusion")
            }
        }
    }
}

/// Invert a small dense row-major matrix by Gauss-Jordan elimination with
/// partial pivoting.  Returns `None` on (numerical) singularity.
fn invert_dense<T: Real>(d: usize, a: &[T]) -> Option<Vec<T>> {
    let mut m = a.to_vec();
    let mut inv = vec![T::zero(); d * d];
    for i in 0..d {
        inv[i * d + i] = T::one();
    }
    for col in 0..d {
        let mut piv = col;
        for r in col + 1..d {
            if m[r * d + col].abs() > m[piv * d + col].abs() {
                piv = r;
            }
        }
        if m[piv * d + col].abs() <= T::of(1e-300) {
            return None;
        }
        if piv != col {
            for j in 0..d {
                m.swap(col * d + j, piv * d + j);
                inv.swap(col * d + j, piv * d + j);
            }
        }
        let p = m[col * d + col];
        for j in 0..d {
            m[col * d + j] /= p;
            inv[col * d + j] /= p;
        }
        for r in 0..d {
            if r == col {
                continue;
            }
            let f = m[r * d + col];
            if f == T::zero() {
                continue;
            }
            for j in 0..d {
                let mcj = m[col * d + j];
                let icj = inv[col * d + j];
                m[r * d + j] -= f * mcj;
                inv[r * d + j] -= f * icj;
            }
        }
    }
    Some(inv)
}

/// Attempt a Cholesky factorization of a symmetric matrix; success certifies
/// positive-definiteness.
fn is_positive_definite<T: Real>(d: usize, a: &[T], tol: T) -> bool {
    let mut l = vec![T::zero(); d * d];
    for i in 0..d {
        for j in 0..=i {
            let mut s = a[i * d + j];
            for k in 0..j {
                s -= l[i * d + k] * l[j * d + k];
            }
            if i == j {
                if s <= tol {
                    return false;
                }
                l[i * d + i] = s.sqrt();
            } else {
                l[i * d + j] = s / l[j * d + j];
            }
        }
    }
    true
}

/// Tolerances and grid resolution for [`validate_problem_with`].  The
/// defaults are calibrated for `f64`; `f32` problems need looser settings.
#[derive(Debug, Clone)]
pub struct ValidationConfig {
    /// Absolute tolerance on `|f(x) - f(x + e_i)|` for periodicity.
    pub periodicity_tol: f64,
    /// Central finite-difference step for derivative cross-checks.
    pub fd_step: f64,
    /// Relative tolerance (floored at magnitude 1) for derivative checks.
    pub derivative_rel_tol: f64,
    /// Sample points per dimension.
    pub grid_per_dim: usize,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        ValidationConfig {
            periodicity_tol: 1e-12,
            fd_step: 1e-5,
            derivative_rel_tol: 1e-4,
            grid_per_dim: 32,
        }
    }
}

/// Validate a problem with default tolerances.  Returns a report listing all
/// failures; callers decide whether to abort.
pub fn validate_problem<T: Real>(p: &Problem<T>) -> ValidationReport {
    validate_problem_with(p, &ValidationConfig::default())
}

/// Validate positive-definiteness of `sigma sigma^T`, 1-periodicity of every
/// field, and consistency of every supplied derivative with central finite
/// differences, on a `grid_per_dim^dim` sample grid.
pub fn validate_problem_with<T: Real>(
    p: &Problem<T>,
    cfg: &ValidationConfig,
) -> ValidationReport {
    let d = p.dim;
    let mut report = ValidationReport::default();
    if p.diffusion.dim() != d {
        report.failures.push(ValidationFailure {
            field: "diffusion.dim".into(),
            point: vec![],
            expected: d as f64,
            got: p.diffusion.dim() as f64,
        });
        return report;
    }

    let n = cfg.grid_per_dim;
    let total = n.pow(d as u32);
    let mut x = vec![T::zero(); d];
    let mut fail = |field: &str, point: &[T], expected: f64, got: f64| {
        report.failures.push(ValidationFailure {
            field: field.into(),
            point: point.iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).collect(),
            expected,
            got,
        });
    };

    // Buffers reused across sample points.
    let mut buf_a = vec![T::zero(); d * d * d];
    let mut buf_b = vec![T::zero(); d * d * d];
    let mut buf_c = vec![T::zero(); d * d * d];
    let step = T::of(cfg.fd_step);

    for idx in 0..total {
        // Offset grid avoids placing every sample on the symmetry points of
        // trigonometric fields (where e.g. both sides of a sign error vanish).
        let mut rem = idx;
        for xi in x.iter_mut().take(d) {
            *xi = T::of((rem % n) as f64 + 0.5) / T::of_usize(n);
            rem /= n;
        }

        // -- positive definiteness of sigma sigma^T -----------------------
        match &p.diffusion {
            Diffusion::Scalar1d { sigma, .. } => {
                let s = sigma(x[0]);
                if s * s <= T::of(1e-12) {
                    fail("diffusion_positive_definite", &x, 1.0, (s * s).to_f64().unwrap_or(0.0));
                }
            }
            Diffusion::ConstMatrix { dim, sigma, .. } => {
                if idx == 0 {
                    // Constant matrix: check once.
                    let mut a = vec![T::zero(); dim * dim];
                    for i in 0..*dim {
                        for j in 0..*dim {
                            let mut acc = T::zero();
                            for k in 0..*dim {
                                acc += sigma[i * dim + k] * sigma[j * dim + k];
                            }
                            a[i * dim + j] = acc;
                        }
                    }
                    if !is_positive_definite(*dim, &a, T::of(1e-12)) {
                        fail("diffusion_positive_definite", &x, 1.0, 0.0);
                    }
                }
            }
        }

        // -- periodicity ---------------------------------------------------
        // Evaluate each field at x and at x + e_i (literally shifted by one
        // period, no wrapping) and compare.
        let vec_fields: [(&str, &FieldInto<T>, usize); 4] = [
            ("drift", &p.drift, d),
            ("drift_grad", &p.drift_grad, d * d),
            ("forcing", &p.forcing, d),
            ("observable_grad", &p.observable_grad, d),
        ];
        let mut xs = x.clone();
        for axis in 0..d {
            xs.copy_from_slice(&x);
            xs[axis] += T::one();
            for (name, f, len) in vec_fields.iter() {
                f(&x, &mut buf_a[..*len]);
                f(&xs, &mut buf_b[..*len]);
                for k in 0..*len {
                    let diff = (buf_a[k] - buf_b[k]).abs();
                    if diff.to_f64().unwrap_or(f64::INFINITY) > cfg.periodicity_tol {
                        fail(
                            &format!("{name}_periodicity"),
                            &x,
                            buf_a[k].to_f64().unwrap_or(f64::NAN),
                            buf_b[k].to_f64().unwrap_or(f64::NAN),
                        );
                    }
                }
            }
            let t0 = p.theta(&x);
            let t1 = p.theta(&xs);
            if (t0 - t1).abs().to_f64().unwrap_or(f64::INFINITY) > cfg.periodicity_tol {
                fail("observable_periodicity", &x, t0.to_f64().unwrap_or(f64::NAN), t1.to_f64().unwrap_or(f64::NAN));
            }
            if let Diffusion::Scalar1d { sigma, .. } = &p.diffusion {
                let s0 = sigma(x[0]);
                let s1 = sigma(xs[0]);
                if (s0 - s1).abs().to_f64().unwrap_or(f64::INFINITY) > cfg.periodicity_tol {
                    fail("sigma_periodicity", &x, s0.to_f64().unwrap_or(f64::NAN), s1.to_f64().unwrap_or(f64::NAN));
                }
            }
        }

        // -- derivative consistency (central finite differences) -----------
        let rel = cfg.derivative_rel_tol;
        let close = |analytic: T, fd: T| {
            let scale = analytic.abs().to_f64().unwrap_or(0.0).max(1.0);
            (analytic - fd).abs().to_f64().unwrap_or(f64::INFINITY) <= rel * scale
        };

        // drift_grad[i*d + j] vs central difference of drift along e_j
        (p.drift_grad)(&x, &mut buf_a[..d * d]);
        for j in 0..d {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += step;
            xm[j] -= step;
            (p.drift)(&xp, &mut buf_b[..d]);
            (p.drift)(&xm, &mut buf_c[..d]);
            for i in 0..d {
                let fd = (buf_b[i] - buf_c[i]) / (T::of(2.0) * step);
                if !close(buf_a[i * d + j], fd) {
                    fail("drift_grad", &x, fd.to_f64().unwrap_or(f64::NAN), buf_a[i * d + j].to_f64().unwrap_or(f64::NAN));
                }
            }
        }

        // drift_hess[(i*d + j)*d + k] vs central difference of drift_grad along e_k
        (p.drift_hess)(&x, &mut buf_a[..d * d * d]);
        for k in 0..d {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[k] += step;
            xm[k] -= step;
            (p.drift_grad)(&xp, &mut buf_b[..d * d]);
            (p.drift_grad)(&xm, &mut buf_c[..d * d]);
            for i in 0..d {
                for j in 0..d {
                    let fd = (buf_b[i * d + j] - buf_c[i * d + j]) / (T::of(2.0) * step);
                    if !close(buf_a[(i * d + j) * d + k], fd) {
                        fail("drift_hess", &x, fd.to_f64().unwrap_or(f64::NAN), buf_a[(i * d + j) * d + k].to_f64().unwrap_or(f64::NAN));
                    }
                }
            }
        }

        // observable_grad vs central difference of observable
        (p.observable_grad)(&x, &mut buf_a[..d]);
        for j in 0..d {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += step;
            xm[j] -= step;
            let fd = (p.theta(&xp) - p.theta(&xm)) / (T::of(2.0) * step);
            if !close(buf_a[j], fd) {
                fail("observable_grad", &x, fd.to_f64().unwrap_or(f64::NAN), buf_a[j].to_f64().unwrap_or(f64::NAN));
            }
        }

        // sigma derivatives (1D only)
        if let Diffusion::Scalar1d { sigma, dsigma, d2sigma } = &p.diffusion {
            let xp = x[0] + step;
            let xm = x[0] - step;
            let fd1 = (sigma(xp) - sigma(xm)) / (T::of(2.0) * step);
            if !close(dsigma(x[0]), fd1) {
                fail("dsigma", &x, fd1.to_f64().unwrap_or(f64::NAN), dsigma(x[0]).to_f64().unwrap_or(f64::NAN));
            }
            let fd2 = (dsigma(xp) - dsigma(xm)) / (T::of(2.0) * step);
            if !close(d2sigma(x[0]), fd2) {
                fail("d2sigma", &x, fd2.to_f64().unwrap_or(f64::NAN), d2sigma(x[0]).to_f64().unwrap_or(f64::NAN));
            }
        }
    }

    report
}

// ---------------------------------------------------------------------------
// Built-in problem registry
// ---------------------------------------------------------------------------

/// Names accepted by [`make_problem`].
pub const REGISTRY: &[&str] = &[
    "cosine1d",
    "cosine1d-shifted",
    "const1d",
    "cosine2d",
    "mild1d",
];

/// Construct a built-in problem by name.
///
/// * `cosine1d` — the 1D benchmark: `b = pi sin(2 pi x)`, `sigma = sqrt(2)`,
///   `F = 1`, `theta = b`.  Gradient drift, so the stationary density has the
///   closed Gibbs form `exp(-cos(2 pi x)/2)` (up to normalization).
/// * `cosine1d-shifted` — same dynamics, observable `theta + 1`.  The shift
///   leaves the response unchanged but moves the stationary mean of `theta`
///   off zero, which is what makes the *uncentered* estimator's variance grow
///   with the horizon.  (For `cosine1d` itself the stationary mean vanishes
///   by parity and the uncentered variance stays bounded — a degenerate case
///   for variance-growth comparisons.)
/// * `const1d` — constant coefficients `b = 1`, `sigma = 1`, `F = 1`,
///   `theta = sin(2 pi x)`; the response is exactly zero and the Poisson
///   solution is a single Fourier mode, both known in closed form.
/// * `cosine2d` — separable 2D potential with `b = (pi sin(2 pi x),
///   pi sin(2 pi y))`, `sigma = sqrt(2) I`, non-gradient forcing `F = (1, 0)`,
///   `theta = pi sin(2 pi x)`.  Because `theta` and `F` only involve the
///   first coordinate, its response equals the 1D benchmark's.
/// * `mild1d` — `b = 0.6 sin(2 pi x)`, `sigma = 0.7`, `F = 1`,
///   `theta = cos(2 pi x)`: a mildly stiff problem whose finite-horizon weak
///   error is resolvable yet asymptotic on coarse step grids, used for
///   integrator-order measurements.
pub fn make_problem<T: Real>(name: &str) -> Result<Problem<T>> {
    match name {
        "cosine1d" => Ok(cosine1d(0.0)),
        "cosine1d-shifted" => Ok(cosine1d(1.0)),
        "const1d" => Ok(const1d()),
        "cosine2d" => Ok(cosine2d()),
        "mild1d" => Ok(mild1d()),
        _ => Err(Error::Validation(format!(
            "unknown problem '{name}' (known: {})",
            REGISTRY.join(", ")
        ))),
    }
}

/// 1D benchmark with observable offset `shift` (0 for the plain benchmark).
fn cosine1d<T: Real>(shift: f64) -> Problem<T> {
    let pi = T::of(PI);
    let two_pi = T::of(2.0 * PI);
    let two_pi2 = T::of(2.0 * PI * PI);
    let four_pi3 = T::of(4.0 * PI * PI * PI);
    let sh = T::of(shift);
    Problem {
        name: if shift == 0.0 { "cosine1d".into() } else { "cosine1d-shifted".into() },
        dim: 1,
        drift: Box::new(move |x, out| out[0] = pi * (two_pi * x[0]).sin()),
        drift_grad: Box::new(move |x, out| out[0] = two_pi2 * (two_pi * x[0]).cos()),
        drift_hess: Box::new(move |x, out| out[0] = -four_pi3 * (two_pi * x[0]).sin()),
        diffusion: Diffusion::const_scalar_1d(std::f64::consts::SQRT_2),
        forcing: Box::new(|_, out| out[0] = T::one()),
        observable: Box::new(move |x| pi * (two_pi * x[0]).sin() + sh),
        observable_grad: Box::new(move |x, out| out[0] = two_pi2 * (two_pi * x[0]).cos()),
    }
}

fn const1d<T: Real>() -> Problem<T> {
    let two_pi = T::of(2.0 * PI);
    Problem {
        name: "const1d".into(),
        dim: 1,
        drift: Box::new(|_, out| out[0] = T::one()),
        drift_grad: Box::new(|_, out| out[0] = T::zero()),
        drift_hess: Box::new(|_, out| out[0] = T::zero()),
        diffusion: Diffusion::const_scalar_1d(1.0),
        forcing: Box::new(|_, out| out[0] = T::one()),
        observable: Box::new(move |x| (two_pi * x[0]).sin()),
        observable_grad: Box::new(move |x, out| out[0] = two_pi * (two_pi * x[0]).cos()),
    }
}

fn cosine2d<T: Real>() -> Problem<T> {
    let pi = T::of(PI);
    let two_pi = T::of(2.0 * PI);
    let two_pi2 = T::of(2.0 * PI * PI);
    let four_pi3 = T::of(4.0 * PI * PI * PI);
    let s = T::of(std::f64::consts::SQRT_2);
    let diffusion = Diffusion::const_matrix(2, vec![s, T::zero(), T::zero(), s])
        .expect("sqrt(2) identity is invertible");
    Problem {
        name: "cosine2d".into(),
        dim: 2,
        drift: Box::new(move |x, out| {
            out[0] = pi * (two_pi * x[0]).sin();
            out[1] = pi * (two_pi * x[1]).sin();
        }),
        drift_grad: Box::new(move |x, out| {
            out[0] = two_pi2 * (two_pi * x[0]).cos(); // d b^0 / dx
            out[1] = T::zero(); // d b^0 / dy
            out[2] = T::zero(); // d b^1 / dx
            out[3] = two_pi2 * (two_pi * x[1]).cos(); // d b^1 / dy
        }),
        drift_hess: Box::new(move |x, out| {
            for o in out.iter_mut().take(8) {
                *o = T::zero();
            }
            out[0] = -four_pi3 * (two_pi * x[0]).sin(); // d2 b^0 / dx dx
            out[7] = -four_pi3 * (two_pi * x[1]).sin(); // d2 b^1 / dy dy
        }),
        diffusion,
        forcing: Box::new(|_, out| {
            out[0] = T::one();
            out[1] = T::zero();
        }),
        observable: Box::new(move |x| pi * (two_pi * x[0]).sin()),
        observable_grad: Box::new(move |x, out| {
            out[0] = two_pi2 * (two_pi * x[0]).cos();
            out[1] = T::zero();
        }),
    }
}

fn mild1d<T: Real>() -> Problem<T> {
    let a = T::of(0.6);
    let two_pi = T::of(2.0 * PI);
    Problem {
        name: "mild1d".into(),
        dim: 1,
        drift: Box::new(move |x, out| out[0] = a * (two_pi * x[0]).sin()),
        drift_grad: Box::new(move |x, out| out[0] = a * two_pi * (two_pi * x[0]).cos()),
        drift_hess: Box::new(move |x, out| {
            out[0] = -a * two_pi * two_pi * (two_pi * x[0]).sin()
        }),
        diffusion: Diffusion::const_scalar_1d(0.7),
        forcing: Box::new(|_, out| out[0] = T::one()),
        observable: Box::new(move |x| (two_pi * x[0]).cos()),
        observable_grad: Box::new(move |x, out| out[0] = -two_pi * (two_pi * x[0]).sin()),
    }
}
