//! Experiment driver: parallel replica execution, step-size sweeps,
//! convergence-rate fits, variance scans, and CSV emission.
//!
//! Reproducibility contract: replica `i` is simulated from a keyed stream
//! that depends only on `(seed, i)`, replicas are collected in index order,
//! and all reductions are sequential over that order — so results are
//! bitwise identical for any worker count.  CSV numbers are printed with
//! the shortest round-trip float formatting, keeping output byte-stable.

use crate::error::{Error, Result};
use crate::estimators::{
    aggregate_clr, aggregate_lr_uncentered, run_replica, Centering, EstimateSummary, Estimator,
    ReplicaResult, RunConfig, WeightKind,
};
use crate::general2::{derive_general_coeffs, it2_expansion};
use crate::integrators::{em_step, it2_step, Scheme, StepScratch};
use crate::model::{Diffusion, Problem};
use crate::rng::{initial_point, ReplicaStreams};
use crate::scalar::Real;
use rayon::prelude::*;
use std::io::Write;
use std::time::Instant;

/// Parameters of one estimator run (fixed step size).
#[derive(Debug, Clone)]
pub struct RunParams {
    pub scheme: Scheme,
    pub estimator: Estimator,
    /// Step size.
    pub h: f64,
    /// Accumulation horizon (physical time); the step count is
    /// `floor(t_horizon / h)`.
    pub t_horizon: f64,
    /// Burn-in horizon (physical time) before accumulation starts.
    pub burn_in: f64,
    pub replicas: usize,
    pub seed: u64,
    /// Worker threads; `0` uses the global default pool.
    pub workers: usize,
}

impl RunParams {
    pub fn n_steps(&self) -> usize {
        (self.t_horizon / self.h).floor() as usize
    }
    pub fn n_burn(&self) -> usize {
        (self.burn_in / self.h).floor() as usize
    }
}

fn validate_params<T: Real>(p: &Problem<T>, params: &RunParams) -> Result<()> {
    if !(params.h.is_finite() && params.h > 0.0) {
        return Err(Error::Validation(format!(
            "step size must be positive, got {}",
            params.h
        )));
    }
    if !(params.t_horizon.is_finite() && params.t_horizon >= params.h) {
        return Err(Error::Validation(format!(
            "horizon {} must be at least one step {}",
            params.t_horizon, params.h
        )));
    }
    if !(params.burn_in.is_finite() && params.burn_in >= 0.0) {
        return Err(Error::Validation("burn-in must be nonnegative".into()));
    }
    if params.replicas < 2 {
        return Err(Error::Validation(
            "at least 2 replicas are required".into(),
        ));
    }
    if params.estimator == Estimator::Clr2General
        && !(p.dim == 1 && matches!(p.diffusion, Diffusion::Scalar1d { .. }))
    {
        return Err(Error::Validation(
            "the general second-order estimator requires a 1D scalar-diffusion problem".into(),
        ));
    }
    Ok(())
}

/// Run `replicas` independent replicas in parallel, in index order.
pub fn run_replicas<T: Real>(
    p: &Problem<T>,
    cfg: &RunConfig<'_, T>,
    replicas: usize,
    workers: usize,
) -> Result<Vec<ReplicaResult<T>>> {
    let body = || {
        (0..replicas as u64)
            .into_par_iter()
            .map(|i| run_replica(p, cfg, i))
            .collect::<Result<Vec<_>>>()
    };
    if workers == 0 {
        body()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::Validation(format!("thread pool construction failed: {e}")))?;
        pool.install(body)
    }
}

/// Simulate all replicas for `params` (weight process chosen by the
/// estimator) and return the raw per-replica results.
pub fn simulate<T: Real>(p: &Problem<T>, params: &RunParams) -> Result<Vec<ReplicaResult<T>>> {
    validate_params(p, params)?;
    let base = |weight| RunConfig {
        scheme: params.scheme,
        weight,
        need_beta: params.estimator.order() == 2,
        h: params.h,
        n_burn: params.n_burn(),
        n: params.n_steps(),
        seed: params.seed,
    };
    match params.estimator {
        Estimator::Lr | Estimator::Clr1 => {
            run_replicas(p, &base(WeightKind::Z), params.replicas, params.workers)
        }
        Estimator::Clr2 => run_replicas(p, &base(WeightKind::Y), params.replicas, params.workers),
        Estimator::Clr2General => {
            let exp = it2_expansion(p)?;
            let gc = derive_general_coeffs(p, exp)?;
            run_replicas(
                p,
                &base(WeightKind::YGeneral(&gc)),
                params.replicas,
                params.workers,
            )
        }
    }
}

/// Simulate and aggregate into an estimate.
pub fn estimate<T: Real>(
    p: &Problem<T>,
    params: &RunParams,
    centering: Centering<T>,
) -> Result<EstimateSummary<T>> {
    let results = simulate(p, params)?;
    let h = T::of(params.h);
    let t = T::of(params.t_horizon);
    match params.estimator {
        Estimator::Lr => aggregate_lr_uncentered(&results, h, t),
        e => aggregate_clr(&results, e, h, t, centering),
    }
}

/// One sweep cell.  On failure the numeric fields are NaN and `status`
/// carries the error.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub h: f64,
    pub t_horizon: f64,
    pub n_steps: usize,
    pub replicas: usize,
    pub estimate: f64,
    pub std_error: f64,
    pub variance: f64,
    pub oracle_ref: f64,
    pub abs_error: f64,
    pub wall_time_s: f64,
    pub status: Option<String>,
}

fn to_f64<T: Real>(x: T) -> f64 {
    x.to_f64().expect("scalar convertible to f64")
}

/// Sweep the step-size grid at fixed horizon and replica count.  A failing
/// cell is recorded (NaN values, status set) and the sweep continues.
pub fn run_sweep<T: Real>(
    p: &Problem<T>,
    base: &RunParams,
    h_grid: &[f64],
    centering: Centering<T>,
    oracle_ref: f64,
) -> Vec<SweepRow> {
    let mut rows = Vec::with_capacity(h_grid.len());
    for &h in h_grid {
        let mut params = base.clone();
        params.h = h;
        let start = Instant::now();
        let outcome = estimate(p, &params, centering);
        let wall = start.elapsed().as_secs_f64();
        let row = match outcome {
            Ok(s) => {
                let est = to_f64(s.estimate);
                SweepRow {
                    h,
                    t_horizon: params.t_horizon,
                    n_steps: params.n_steps(),
                    replicas: params.replicas,
                    estimate: est,
                    std_error: to_f64(s.std_error),
                    variance: to_f64(s.variance),
                    oracle_ref,
                    abs_error: (est - oracle_ref).abs(),
                    wall_time_s: wall,
                    status: None,
                }
            }
            Err(e) => SweepRow {
                h,
                t_horizon: params.t_horizon,
                n_steps: (params.t_horizon / h).floor().max(0.0) as usize,
                replicas: params.replicas,
                estimate: f64::NAN,
                std_error: f64::NAN,
                variance: f64::NAN,
                oracle_ref,
                abs_error: f64::NAN,
                wall_time_s: wall,
                status: Some(e.to_string()),
            },
        };
        rows.push(row);
    }
    rows
}

/// Ordinary least-squares fit of `log(abs_error)` against `log(h)`.
#[derive(Debug, Clone)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub stderr_slope: f64,
    /// Rows entering the fit.
    pub used: usize,
    /// Rows excluded (failed, or error not resolved above Monte Carlo noise).
    pub excluded: usize,
}

/// Fit the observed convergence rate over rows whose error is resolved
/// above the Monte Carlo noise floor (`abs_error > 3 std_error`).  Fewer
/// than 3 qualifying rows make the fit inconclusive.
pub fn fit_rate(rows: &[SweepRow]) -> Result<RateFit> {
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| {
            r.status.is_none()
                && r.abs_error.is_finite()
                && r.std_error.is_finite()
                && r.abs_error > 3.0 * r.std_error
                && r.abs_error > 0.0
        })
        .map(|r| (r.h.ln(), r.abs_error.ln()))
        .collect();
    let n = pts.len();
    if n < 3 {
        return Err(Error::Inconclusive(format!(
            "only {n} of {} grid points have error resolved above the noise floor (need 3)",
            rows.len()
        )));
    }
    let nf = n as f64;
    let xbar = pts.iter().map(|p| p.0).sum::<f64>() / nf;
    let ybar = pts.iter().map(|p| p.1).sum::<f64>() / nf;
    let sxx: f64 = pts.iter().map(|p| (p.0 - xbar) * (p.0 - xbar)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - xbar) * (p.1 - ybar)).sum();
    let slope = sxy / sxx;
    let intercept = ybar - slope * xbar;
    let ss_res: f64 = pts
        .iter()
        .map(|p| {
            let r = p.1 - (intercept + slope * p.0);
            r * r
        })
        .sum();
    let stderr_slope = if n > 2 {
        (ss_res / (nf - 2.0) / sxx).sqrt()
    } else {
        f64::NAN
    };
    Ok(RateFit {
        slope,
        intercept,
        stderr_slope,
        used: n,
        excluded: rows.len() - n,
    })
}

/// One variance-scan cell: CLR and uncentered-LR statistics computed from
/// the same trajectories.
#[derive(Debug, Clone)]
pub struct VarianceRow {
    pub t_horizon: f64,
    pub n_steps: usize,
    pub est_clr: f64,
    pub var_clr: f64,
    pub est_lr: f64,
    pub var_lr: f64,
    pub status: Option<String>,
}

/// Scan the horizon grid at fixed step size, reporting how the variances
/// of the centered and uncentered estimators grow with `T`.
pub fn variance_scan<T: Real>(
    p: &Problem<T>,
    base: &RunParams,
    t_grid: &[f64],
    centering: Centering<T>,
) -> Vec<VarianceRow> {
    let mut rows = Vec::with_capacity(t_grid.len());
    for &t in t_grid {
        let mut params = base.clone();
        params.t_horizon = t;
        let h = T::of(params.h);
        let tt = T::of(t);
        let outcome = simulate(p, &params).and_then(|results| {
            let clr = aggregate_clr(&results, params.estimator, h, tt, centering)?;
            let lr = aggregate_lr_uncentered(&results, h, tt)?;
            Ok((clr, lr))
        });
        let row = match outcome {
            Ok((clr, lr)) => VarianceRow {
                t_horizon: t,
                n_steps: params.n_steps(),
                est_clr: to_f64(clr.estimate),
                var_clr: to_f64(clr.variance),
                est_lr: to_f64(lr.estimate),
                var_lr: to_f64(lr.variance),
                status: None,
            },
            Err(e) => VarianceRow {
                t_horizon: t,
                n_steps: (t / params.h).floor().max(0.0) as usize,
                est_clr: f64::NAN,
                var_clr: f64::NAN,
                est_lr: f64::NAN,
                var_lr: f64::NAN,
                status: Some(e.to_string()),
            },
        };
        rows.push(row);
    }
    rows
}

/// Monte Carlo estimate of `E[theta(X_T)]` from the uniform initial
/// distribution (no burn-in, terminal observable).  Returns
/// `(mean, std_error)`.
pub fn weak_terminal_expectation<T: Real>(
    p: &Problem<T>,
    scheme: Scheme,
    h: f64,
    t_final: f64,
    replicas: usize,
    seed: u64,
    workers: usize,
) -> Result<(T, T)> {
    if !(h > 0.0 && t_final >= h) {
        return Err(Error::Validation(format!(
            "horizon {t_final} must be at least one step {h}"
        )));
    }
    if replicas < 2 {
        return Err(Error::Validation("at least 2 replicas are required".into()));
    }
    let n = (t_final / h).floor() as usize;
    let d = p.dim;
    let is_1d_scalar = matches!(p.diffusion, Diffusion::Scalar1d { .. });
    let one = |replica: u64| -> Result<T> {
        let h_t = T::of(h);
        let sqrt_h = h.sqrt();
        let mut x = vec![T::zero(); d];
        initial_point(seed, replica, &mut x);
        let mut streams = ReplicaStreams::new(seed, replica);
        let mut scratch = StepScratch::new(d);
        let mut dw = vec![T::zero(); d];
        let v1 = [-h_t];
        for _ in 0..n {
            streams.next_gaussian_increment(sqrt_h, &mut dw);
            match scheme {
                Scheme::Em => em_step(p, &mut x, h_t, &dw, &mut scratch),
                Scheme::It2 => {
                    it2_step(p, &mut x, h_t, &dw, if is_1d_scalar { &v1 } else { &[] }, &mut scratch)
                }
            }
        }
        Ok(p.theta(&x))
    };
    let body = || {
        (0..replicas as u64)
            .into_par_iter()
            .map(one)
            .collect::<Result<Vec<T>>>()
    };
    let vals = if workers == 0 {
        body()?
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::Validation(format!("thread pool construction failed: {e}")))?;
        pool.install(body)?
    };
    let s = T::of_usize(replicas);
    let mean = vals.iter().copied().sum::<T>() / s;
    let mut var = T::zero();
    for v in &vals {
        let dm = *v - mean;
        var += dm * dm;
    }
    var /= T::of_usize(replicas - 1);
    Ok((mean, (var / s).sqrt()))
}

/// Canonical sweep CSV columns (deterministic output).  With `timings`
/// a wall-clock column is appended (and byte stability is forfeited).
pub fn write_sweep_csv<W: Write>(
    w: &mut W,
    problem: &str,
    scheme: Scheme,
    estimator: Estimator,
    rows: &[SweepRow],
    timings: bool,
) -> std::io::Result<()> {
    write!(
        w,
        "problem,scheme,estimator,h,T,replicas,estimate,std_error,variance,oracle_ref,abs_error"
    )?;
    if timings {
        write!(w, ",wall_time_s")?;
    }
    writeln!(w)?;
    for r in rows {
        write!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{}",
            problem,
            scheme,
            estimator,
            r.h,
            r.t_horizon,
            r.replicas,
            r.estimate,
            r.std_error,
            r.variance,
            r.oracle_ref,
            r.abs_error
        )?;
        if timings {
            write!(w, ",{}", r.wall_time_s)?;
        }
        writeln!(w)?;
        if let Some(msg) = &r.status {
            writeln!(w, "# error at h={}: {}", r.h, msg)?;
        }
    }
    Ok(())
}

/// Variance-scan CSV.
pub fn write_variance_csv<W: Write>(
    w: &mut W,
    problem: &str,
    scheme: Scheme,
    estimator: Estimator,
    h: f64,
    replicas: usize,
    rows: &[VarianceRow],
) -> std::io::Result<()> {
    writeln!(
        w,
        "problem,scheme,estimator,h,T,replicas,est_clr,var_clr,est_lr,var_lr"
    )?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{}",
            problem,
            scheme,
            estimator,
            h,
            r.t_horizon,
            replicas,
            r.est_clr,
            r.var_clr,
            r.est_lr,
            r.var_lr
        )?;
        if let Some(msg) = &r.status {
            writeln!(w, "# error at T={}: {}", r.t_horizon, msg)?;
        }
    }
    Ok(())
}

/// Gnuplot-style plot data: `x y yerr` triples under `# series:` headers.
pub fn write_plot_data<W: Write>(w: &mut W, rows: &[SweepRow]) -> std::io::Result<()> {
    writeln!(w, "# series: abs_error_vs_h")?;
    for r in rows.iter().filter(|r| r.status.is_none()) {
        writeln!(w, "{} {} {}", r.h, r.abs_error, r.std_error)?;
    }
    writeln!(w, "# series: estimate_vs_h")?;
    for r in rows.iter().filter(|r| r.status.is_none()) {
        writeln!(w, "{} {} {}", r.h, r.estimate, r.std_error)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::make_problem;

    fn small_params() -> RunParams {
        RunParams {
            scheme: Scheme::Em,
            estimator: Estimator::Clr1,
            h: 0.05,
            t_horizon: 2.0,
            burn_in: 1.0,
            replicas: 64,
            seed: 42,
            workers: 0,
        }
    }

    #[test]
    fn replica_results_independent_of_worker_count() {
        let p = make_problem::<f64>("cosine1d").unwrap();
        let mut params = small_params();
        let base = simulate(&p, &params).unwrap();
        for workers in [1, 4, 16] {
            params.workers = workers;
            let got = simulate(&p, &params).unwrap();
            assert_eq!(got.len(), base.len());
            for (a, b) in got.iter().zip(&base) {
                assert_eq!(a.alpha.to_bits(), b.alpha.to_bits());
                assert_eq!(a.weight.to_bits(), b.weight.to_bits());
                assert_eq!(a.beta.to_bits(), b.beta.to_bits());
            }
        }
    }

    #[test]
    fn step_counts_are_exact_floors() {
        let cases = [
            (20.0, 0.005, 4000),
            (100.0, 0.005, 20000),
            (20.0, 0.08, 250),
            (5.0, 0.01, 500),
            (50.0, 0.01, 5000),
            (1.0, 0.05, 20),
        ];
        for (t, h, n) in cases {
            let params = RunParams {
                t_horizon: t,
                h,
                ..small_params()
            };
            assert_eq!(params.n_steps(), n, "floor({t}/{h})");
        }
    }

    #[test]
    fn rate_fit_recovers_exact_power_laws() {
        let mk = |h: f64, err: f64| SweepRow {
            h,
            t_horizon: 20.0,
            n_steps: (20.0 / h) as usize,
            replicas: 100,
            estimate: err,
            std_error: 1e-12,
            variance: 1e-24,
            oracle_ref: 0.0,
            abs_error: err,
            wall_time_s: 0.0,
            status: None,
        };
        let grid = [0.08, 0.04, 0.02, 0.01, 0.005];
        let quad: Vec<SweepRow> = grid.iter().map(|&h| mk(h, 0.5 * h * h)).collect();
        let fit = fit_rate(&quad).unwrap();
        assert!((fit.slope - 2.0).abs() < 1e-12, "slope = {}", fit.slope);
        assert_eq!(fit.used, 5);
        let lin: Vec<SweepRow> = grid.iter().map(|&h| mk(h, 0.3 * h)).collect();
        let fit = fit_rate(&lin).unwrap();
        assert!((fit.slope - 1.0).abs() < 1e-12, "slope = {}", fit.slope);
    }

    #[test]
    fn rate_fit_excludes_noise_dominated_rows_and_reports_inconclusive() {
        let mk = |h: f64, err: f64, se: f64| SweepRow {
            h,
            t_horizon: 20.0,
            n_steps: (20.0 / h) as usize,
            replicas: 100,
            estimate: err,
            std_error: se,
            variance: se * se * 100.0,
            oracle_ref: 0.0,
            abs_error: err,
            wall_time_s: 0.0,
            status: None,
        };
        // Two resolved rows only: inconclusive.
        let rows = vec![
            mk(0.08, 0.1, 0.001),
            mk(0.04, 0.05, 0.001),
            mk(0.02, 0.001, 0.001),
            mk(0.01, 0.0005, 0.001),
        ];
        match fit_rate(&rows) {
            Err(Error::Inconclusive(_)) => {}
            other => panic!("expected inconclusive fit, got {other:?}"),
        }
        // Third resolved row makes it fit again, excluding the noisy one.
        let rows = vec![
            mk(0.08, 0.1, 0.001),
            mk(0.04, 0.05, 0.001),
            mk(0.02, 0.025, 0.001),
            mk(0.01, 0.0005, 0.001),
        ];
        let fit = fit_rate(&rows).unwrap();
        assert_eq!(fit.used, 3);
        assert_eq!(fit.excluded, 1);
        assert!((fit.slope - 1.0).abs() < 0.01);
    }

    #[test]
    fn sweep_records_failed_cells_and_continues() {
        let p = make_problem::<f64>("cosine1d").unwrap();
        let base = small_params();
        // 2.5 exceeds the horizon: that cell fails, the rest succeed.
        let rows = run_sweep(&p, &base, &[0.1, 2.5, 0.05], Centering::Empirical, -0.1);
        assert_eq!(rows.len(), 3);
        assert!(rows[0].status.is_none());
        assert!(rows[1].status.is_some());
        assert!(rows[1].estimate.is_nan());
        assert!(rows[2].status.is_none());
        assert!(rows[2].estimate.is_finite());
    }

    #[test]
    fn sweep_csv_is_byte_stable() {
        let rows = vec![
            SweepRow {
                h: 0.08,
                t_horizon: 20.0,
                n_steps: 250,
                replicas: 1000,
                estimate: -0.11582426280557941,
                std_error: 0.0125,
                variance: 0.15625,
                oracle_ref: -0.11582426280557941,
                abs_error: 0.0,
                wall_time_s: 1.5,
                status: None,
            },
            SweepRow {
                h: 0.04,
                t_horizon: 20.0,
                n_steps: 500,
                replicas: 1000,
                estimate: f64::NAN,
                std_error: f64::NAN,
                variance: f64::NAN,
                oracle_ref: -0.11582426280557941,
                abs_error: f64::NAN,
                wall_time_s: 0.0,
                status: Some("numerical failure: example".into()),
            },
        ];
        let mut buf = Vec::new();
        write_sweep_csv(&mut buf, "cosine1d", Scheme::Em, Estimator::Clr1, &rows, false).unwrap();
        let got = String::from_utf8(buf).unwrap();
        let want = "problem,scheme,estimator,h,T,replicas,estimate,std_error,variance,oracle_ref,abs_error\n\
                    cosine1d,em,clr1,0.08,20,1000,-0.1158242628055794,0.0125,0.15625,-0.1158242628055794,0\n\
                    cosine1d,em,clr1,0.04,20,1000,NaN,NaN,NaN,-0.1158242628055794,NaN\n\
                    # error at h=0.04: numerical failure: example\n";
        assert_eq!(got, want);
    }

    #[test]
    fn variance_scan_reports_both_estimators() {
        let p = make_problem::<f64>("cosine1d").unwrap();
        let base = small_params();
        let rows = variance_scan(&p, &base, &[1.0, 2.0], Centering::Empirical);
        assert_eq!(rows.len(), 2);
        for r in &rows {
            assert!(r.status.is_none());
            assert!(r.var_clr.is_finite() && r.var_clr > 0.0);
            assert!(r.var_lr.is_finite() && r.var_lr > 0.0);
        }
    }

    #[test]
    fn terminal_expectation_deterministic_and_bounded() {
        let p = make_problem::<f64>("mild1d").unwrap();
        let (m1, se1) =
            weak_terminal_expectation(&p, Scheme::Em, 0.05, 1.0, 512, 7, 0).unwrap();
        let (m2, _) = weak_terminal_expectation(&p, Scheme::Em, 0.05, 1.0, 512, 7, 4).unwrap();
        assert_eq!(m1.to_bits(), m2.to_bits());
        assert!(se1 > 0.0);
        assert!(m1.abs() <= 1.0); // theta = cos(2 pi x)
    }

    #[test]
    fn invalid_params_rejected() {
        let p = make_problem::<f64>("cosine1d").unwrap();
        let mut params = small_params();
        params.h = 0.0;
        assert!(matches!(
            estimate(&p, &params, Centering::Empirical),
            Err(Error::Validation(_))
        ));
        let mut params = small_params();
        params.replicas = 1;
        assert!(estimate(&p, &params, Centering::Empirical).is_err());
        let mut params = small_params();
        params.estimator = Estimator::Clr2General;
        let p2 = make_problem::<f64>("cosine2d").unwrap();
        assert!(estimate(&p2, &params, Centering::Empirical).is_err());
    }
}
