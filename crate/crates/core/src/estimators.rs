//! Weight processes, per-replica trajectory simulation, and ensemble
//! aggregation into response estimates with uncertainty.
//!
//! Each replica evolves a trajectory for a burn-in phase (weight frozen at
//! zero, nothing accumulated) followed by `N` accumulation steps.  During
//! accumulation the replica maintains
//!
//! * `alpha` — the running time average of the observable over the pre-step
//!   states `X_0 .. X_{N-1}`,
//! * `beta`  — the running time average of `∇theta^T F` (needed by the
//!   second-order correction),
//! * the weight process: `Z` (first order), `Y` (second order), or the
//!   general-construction variant of `Y`,
//!
//! and the weight update at step `n` consumes the *same* Gaussian increment
//! that then advances the state — the correlation between the two is exactly
//! what carries the response signal.  Sums are divided by `N` once at the
//! end, keeping the reduction order fixed and results bit-reproducible.
//!
//! Aggregation combines per-replica results `(alpha_i, beta_i, w_i)` into
//!
//! ```text
//! estimate = mean_i [ (alpha_i - center) w_i  (+ order-2 correction) ]
//! ```
//!
//! with `center` chosen empirically (the ensemble mean of alpha), supplied
//! externally (e.g. from the spectral reference), or variance-optimally.
//! The reported variance/standard error are the empirical ones of the
//! per-replica terms.

use crate::error::{Error, Result};
use crate::general2::GeneralCoeffs;
use crate::integrators::{coeffs_1d, em_step, it2_step, kb_matrix, Scheme, StepScratch};
use crate::model::{Diffusion, Problem};
use crate::rng::{initial_point, ReplicaStreams};
use crate::scalar::Real;

/// Estimator selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Estimator {
    /// Uncentered likelihood-ratio estimator (variance grows with the
    /// horizon; kept as a baseline).
    Lr,
    /// Centered likelihood ratio on the first-order scheme.
    Clr1,
    /// Centered likelihood ratio on the second-order scheme, with the
    /// order-h correction term.
    Clr2,
    /// Second-order estimator assembled through the general scheme-expansion
    /// construction (1D only).
    Clr2General,
}

impl Estimator {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "lr" => Some(Estimator::Lr),
            "clr1" => Some(Estimator::Clr1),
            "clr2" => Some(Estimator::Clr2),
            "clr2-general" => Some(Estimator::Clr2General),
            _ => None,
        }
    }
    pub fn as_str(&self) -> &'static str {
        match self {
            Estimator::Lr => "lr",
            Estimator::Clr1 => "clr1",
            Estimator::Clr2 => "clr2",
            Estimator::Clr2General => "clr2-general",
        }
    }
    /// Weight order: 1 uses `Z`, 2 uses `Y` (or its general variant).
    pub fn order(&self) -> u8 {
        match self {
            Estimator::Lr | Estimator::Clr1 => 1,
            Estimator::Clr2 | Estimator::Clr2General => 2,
        }
    }
}

impl std::fmt::Display for Estimator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Centering policy for the aggregation step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Centering<T> {
    /// Center at the ensemble mean of alpha.
    Empirical,
    /// Center at an externally supplied stationary average.
    Oracle(T),
    /// Center at the empirical variance minimizer
    /// `a* = Cov(alpha w, w) / Var(w)`; falls back to `Empirical` (flagged)
    /// when `Var(w) = 0`.
    Optimal,
}

impl<T> Centering<T> {
    pub fn kind_str(&self) -> &'static str {
        match self {
            Centering::Empirical => "empirical",
            Centering::Oracle(_) => "oracle",
            Centering::Optimal => "optimal",
        }
    }
}

/// Per-replica simulation output.
#[derive(Debug, Clone, Copy, Default)]
pub struct ReplicaResult<T> {
    /// Time average of the observable over accumulation steps.
    pub alpha: T,
    /// Time average of `∇theta^T F`.
    pub beta: T,
    /// Final weight-process value (`Z_N`, `Y_N`, or general `Y_N`).
    pub weight: T,
    /// Time average of `d1 theta'` (general construction only).
    pub gen_a: T,
    /// Time average of `d2 theta` (general construction only).
    pub gen_b: T,
    /// Time average of `d2` (general construction only).
    pub gen_c: T,
}

/// Ensemble statistics of an estimator run.
#[derive(Debug, Clone)]
pub struct EstimateSummary<T> {
    pub estimate: T,
    /// `sqrt(variance / s)`.
    pub std_error: T,
    /// Empirical (sample) variance of the per-replica terms.
    pub variance: T,
    /// Replica count.
    pub s: usize,
    pub h: T,
    pub t_horizon: T,
    pub centering: &'static str,
    /// Set when `Optimal` centering degenerated and `Empirical` was used.
    pub centering_fallback: bool,
}

/// One `Z` update: `z + (sigma(x)^{-1} F(x))^T dw`.
pub fn z_update<T: Real>(p: &Problem<T>, x: &[T], dw: &[T], z: T) -> Result<T> {
    let d = p.dim;
    let mut f = vec![T::zero(); d];
    let mut u = vec![T::zero(); d];
    (p.forcing)(x, &mut f);
    p.diffusion.solve_u(x, &f, &mut u)?;
    let mut acc = z;
    for k in 0..d {
        acc += u[k] * dw[k];
    }
    Ok(acc)
}

/// One `Y` update.  In 1D:
/// `y + sigma^{-1} F dw (1 + (Kb - Lsigma) sigma^{-1} h / 2)`;
/// for constant-matrix diffusion:
/// `y + (sigma^{-1}F)^T (dw + (Kb)^T sigma^{-T} dw h / 2)` where `Kb` has
/// columns `K^k b`.
pub fn y_update<T: Real>(p: &Problem<T>, x: &[T], dw: &[T], y: T, h: T) -> Result<T> {
    let d = p.dim;
    let half = T::of(0.5);
    match &p.diffusion {
        Diffusion::Scalar1d { .. } => {
            let c = coeffs_1d(p, x[0]);
            if c.sigma == T::zero() {
                return Err(Error::Numerical(format!(
                    "singular diffusion sigma(x) = 0 at x = {:?}",
                    x[0]
                )));
            }
            let mut f = [T::zero()];
            (p.forcing)(x, &mut f);
            let u = f[0] / c.sigma;
            let factor = T::one() + half * (c.kb() - c.lsigma()) / c.sigma * h;
            Ok(y + u * dw[0] * factor)
        }
        Diffusion::ConstMatrix { inv, .. } => {
            let mut f = vec![T::zero(); d];
            let mut u = vec![T::zero(); d];
            (p.forcing)(x, &mut f);
            p.diffusion.solve_u(x, &f, &mut u)?;
            let mut kb = vec![T::zero(); d * d];
            kb_matrix(p, x, &mut kb);
            // t = sigma^{-T} dw
            let mut t = vec![T::zero(); d];
            for i in 0..d {
                let mut acc = T::zero();
                for j in 0..d {
                    acc += inv[j * d + i] * dw[j];
                }
                t[i] = acc;
            }
            let mut acc = y;
            for k in 0..d {
                // c_k = ((Kb)^T t)_k = sum_i K^k b^i t_i
                let mut ck = T::zero();
                for i in 0..d {
                    ck += kb[i * d + k] * t[i];
                }
                acc += u[k] * (dw[k] + half * ck * h);
            }
            Ok(acc)
        }
    }
}

/// Which weight process a run accumulates.
pub enum WeightKind<'a, T: Real> {
    Z,
    Y,
    /// General-construction `Y` with the given derived coefficients, plus
    /// accumulation of the `d1`/`d2` correction averages (1D only).
    YGeneral(&'a GeneralCoeffs<'a, T>),
}

/// Full specification of one replica's simulation.
pub struct RunConfig<'a, T: Real> {
    pub scheme: Scheme,
    pub weight: WeightKind<'a, T>,
    /// Accumulate `beta` (needed by order-2 estimators).
    pub need_beta: bool,
    pub h: f64,
    pub n_burn: usize,
    pub n: usize,
    pub seed: u64,
}

/// Simulate one replica: burn in with the weight frozen at zero, then
/// accumulate for `n` steps.  At every accumulation step the observable (and
/// companions) are sampled at the pre-step state, the weight process is
/// updated with the increment about to drive the state, and the state is
/// stepped.  Fully deterministic in `(seed, replica)`.
pub fn run_replica<T: Real>(
    p: &Problem<T>,
    cfg: &RunConfig<T>,
    replica: u64,
) -> Result<ReplicaResult<T>> {
    let d = p.dim;
    let h = T::of(cfg.h);
    let sqrt_h = cfg.h.sqrt();
    let half = T::of(0.5);
    let is_1d_scalar = matches!(p.diffusion, Diffusion::Scalar1d { .. });

    let mut x = vec![T::zero(); d];
    initial_point(cfg.seed, replica, &mut x);
    let mut streams = ReplicaStreams::new(cfg.seed, replica);
    let mut scratch = StepScratch::new(d);
    let mut dw = vec![T::zero(); d];
    let v1 = [-h];

    let step_state = |x: &mut [T], dw: &[T], scratch: &mut StepScratch<T>| match cfg.scheme {
        Scheme::Em => em_step(p, x, h, dw, scratch),
        Scheme::It2 => it2_step(p, x, h, dw, if is_1d_scalar { &v1 } else { &[] }, scratch),
    };

    for _ in 0..cfg.n_burn {
        streams.next_gaussian_increment(sqrt_h, &mut dw);
        step_state(&mut x, &dw, &mut scratch);
    }

    let mut alpha_sum = T::zero();
    let mut beta_sum = T::zero();
    let mut w = T::zero();
    let mut gen_a_sum = T::zero();
    let mut gen_b_sum = T::zero();
    let mut gen_c_sum = T::zero();
    let mut f_buf = vec![T::zero(); d];
    let mut u_buf = vec![T::zero(); d];
    let mut g_buf = vec![T::zero(); d];

    for _ in 0..cfg.n {
        let theta_n = p.theta(&x);
        alpha_sum += theta_n;
        if cfg.need_beta {
            (p.observable_grad)(&x, &mut g_buf);
            (p.forcing)(&x, &mut f_buf);
            let mut gf = T::zero();
            for k in 0..d {
                gf += g_buf[k] * f_buf[k];
            }
            beta_sum += gf;
        }
        if let WeightKind::YGeneral(gc) = &cfg.weight {
            debug_assert_eq!(d, 1, "general construction is one-dimensional");
            let d1x = gc.d1(x[0]);
            let d2x = gc.d2(x[0]);
            (p.observable_grad)(&x, &mut g_buf);
            gen_a_sum += d1x * g_buf[0];
            gen_b_sum += d2x * theta_n;
            gen_c_sum += d2x;
        }

        streams.next_gaussian_increment(sqrt_h, &mut dw);

        // Weight update with the same increment that will step the state.
        match &cfg.weight {
            WeightKind::Z => {
                (p.forcing)(&x, &mut f_buf);
                p.diffusion.solve_u(&x, &f_buf, &mut u_buf)?;
                for k in 0..d {
                    w += u_buf[k] * dw[k];
                }
            }
            WeightKind::Y => {
                if is_1d_scalar {
                    let c = coeffs_1d(p, x[0]);
                    if c.sigma == T::zero() {
                        return Err(Error::Numerical(format!(
                            "singular diffusion sigma(x) = 0 at x = {:?}",
                            x[0]
                        )));
                    }
                    (p.forcing)(&x, &mut f_buf);
                    let u = f_buf[0] / c.sigma;
                    let factor = T::one() + half * (c.kb() - c.lsigma()) / c.sigma * h;
                    w += u * dw[0] * factor;
                } else {
                    w = y_update(p, &x, &dw, w, h)?;
                }
            }
            WeightKind::YGeneral(gc) => {
                let (sigma, _, _) = p.sigma_1d(x[0]);
                if sigma == T::zero() {
                    return Err(Error::Numerical(format!(
                        "singular diffusion sigma(x) = 0 at x = {:?}",
                        x[0]
                    )));
                }
                (p.forcing)(&x, &mut f_buf);
                let u = f_buf[0] / sigma;
                let factor = T::one() + gc.m(x[0]) * h;
                w += u * dw[0] * factor;
            }
        }

        step_state(&mut x, &dw, &mut scratch);
    }

    let n = T::of_usize(cfg.n);
    Ok(ReplicaResult {
        alpha: alpha_sum / n,
        beta: beta_sum / n,
        weight: w,
        gen_a: gen_a_sum / n,
        gen_b: gen_b_sum / n,
        gen_c: gen_c_sum / n,
    })
}

/// The per-replica term whose ensemble mean is the estimate.
#[inline]
pub fn per_replica_term<T: Real>(
    r: &ReplicaResult<T>,
    estimator: Estimator,
    h: T,
    center: T,
) -> T {
    let half = T::of(0.5);
    match estimator {
        Estimator::Lr => r.alpha * r.weight,
        Estimator::Clr1 => (r.alpha - center) * r.weight,
        Estimator::Clr2 => (r.alpha - center) * r.weight + half * h * r.beta,
        Estimator::Clr2General => {
            (r.alpha - center) * r.weight + h * (r.gen_a + r.gen_b - center * r.gen_c)
                - half * h * r.beta
        }
    }
}

fn mean<T: Real>(values: impl Iterator<Item = T>, s: usize) -> T {
    let sum: T = values.sum();
    sum / T::of_usize(s)
}

/// Resolve the centering policy into a concrete center value.
/// Returns `(center, fallback_flag)`.
fn resolve_center<T: Real>(
    results: &[ReplicaResult<T>],
    centering: &Centering<T>,
) -> (T, bool) {
    let s = results.len();
    match centering {
        Centering::Oracle(mu) => (*mu, false),
        Centering::Empirical => (empirical_center(results), false),
        Centering::Optimal => {
            let wbar = mean(results.iter().map(|r| r.weight), s);
            let awbar = mean(results.iter().map(|r| r.alpha * r.weight), s);
            let mut var_w = T::zero();
            let mut cov = T::zero();
            for r in results {
                let dwc = r.weight - wbar;
                var_w += dwc * dwc;
                cov += (r.alpha * r.weight - awbar) * dwc;
            }
            if var_w == T::zero() {
                (empirical_center(results), true)
            } else {
                (cov / var_w, false)
            }
        }
    }
}

/// Ensemble mean of alpha, short-circuited to the exact common value when
/// all replicas agree bitwise (e.g. a constant observable), so structural
/// zeros stay exact.
fn empirical_center<T: Real>(results: &[ReplicaResult<T>]) -> T {
    let first = results[0].alpha;
    if results.iter().all(|r| r.alpha == first) {
        first
    } else {
        mean(results.iter().map(|r| r.alpha), results.len())
    }
}

fn summarize<T: Real>(
    terms: &[T],
    h: T,
    t_horizon: T,
    centering: &'static str,
    fallback: bool,
) -> EstimateSummary<T> {
    let s = terms.len();
    let est = mean(terms.iter().copied(), s);
    let mut var = T::zero();
    for &t in terms {
        let d = t - est;
        var += d * d;
    }
    var /= T::of_usize(s - 1);
    EstimateSummary {
        estimate: est,
        std_error: (var / T::of_usize(s)).sqrt(),
        variance: var,
        s,
        h,
        t_horizon,
        centering,
        centering_fallback: fallback,
    }
}

/// Aggregate per-replica results into a centered estimate.  `estimator`
/// must be one of the centered variants; `h` enters through the order-2
/// correction terms.
pub fn aggregate_clr<T: Real>(
    results: &[ReplicaResult<T>],
    estimator: Estimator,
    h: T,
    t_horizon: T,
    centering: Centering<T>,
) -> Result<EstimateSummary<T>> {
    if results.len() < 2 {
        return Err(Error::Validation(
            "aggregation needs at least 2 replicas".into(),
        ));
    }
    if estimator == Estimator::Lr {
        return Err(Error::Validation(
            "aggregate_clr applies to centered estimators; use aggregate_lr_uncentered".into(),
        ));
    }
    let (center, fallback) = resolve_center(results, &centering);
    let terms: Vec<T> = results
        .iter()
        .map(|r| per_replica_term(r, estimator, h, center))
        .collect();
    let label = if fallback { "empirical" } else { centering.kind_str() };
    Ok(summarize(&terms, h, t_horizon, label, fallback))
}

/// Aggregate the uncentered likelihood-ratio baseline
/// `mean_i(alpha_i w_i)`.
pub fn aggregate_lr_uncentered<T: Real>(
    results: &[ReplicaResult<T>],
    h: T,
    t_horizon: T,
) -> Result<EstimateSummary<T>> {
    if results.len() < 2 {
        return Err(Error::Validation(
            "aggregation needs at least 2 replicas".into(),
        ));
    }
    let terms: Vec<T> = results
        .iter()
        .map(|r| per_replica_term(r, Estimator::Lr, h, T::zero()))
        .collect();
    Ok(summarize(&terms, h, t_horizon, "uncentered", false))
}
