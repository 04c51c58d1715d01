//! Command-line interface for linear-response estimation.
//!
//! Subcommands: `estimate` (single run), `sweep` (step-size grid with a
//! convergence-rate fit), `variance-scan` (horizon grid comparing centered
//! and uncentered variants), `oracle` (spectral reference values and
//! diagnostics), and `selftest` (fast deterministic checks).
//!
//! Settings resolve in three layers: built-in defaults, then a flat
//! `key=value` config file (`--config`), then command-line flags.
//! Exit codes: 0 success, 1 validation error, 2 numerical failure,
//! 3 inconclusive rate fit.

use clap::{Args, Parser, Subcommand};
use linresp_core::estimators::{Centering, Estimator};
use linresp_core::general2::GaussHermite;
use linresp_core::harness::{
    estimate, fit_rate, run_sweep, simulate, variance_scan, write_plot_data, write_sweep_csv,
    write_variance_csv, RunParams, SweepRow,
};
use linresp_core::integrators::{em_step, Scheme, StepScratch};
use linresp_core::model::{make_problem, validate_problem, Problem, REGISTRY};
use linresp_core::oracle::{
    default_resolution, reference_diagnostics, response_fd, solve_reference,
};
use linresp_core::rng::{inverse_normal_cdf, standard_normal_from_u64};
use linresp_core::{Error, Result};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

#[derive(Parser)]
#[command(
    name = "linresp",
    version,
    about = "Linear response of steady-state averages for periodic diffusions"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// One estimator run at a fixed step size; prints a single CSV row.
    Estimate(EstimateArgs),
    /// Sweep a step-size grid and fit the convergence rate.
    Sweep(SweepArgs),
    /// Scan the horizon at fixed step size, comparing centered and
    /// uncentered variances from the same trajectories.
    VarianceScan(ScanArgs),
    /// Spectral reference solution: response value, finite-difference
    /// cross-check, and residual diagnostics.
    Oracle(OracleArgs),
    /// Fast deterministic internal consistency checks.
    Selftest,
}

#[derive(Args)]
struct Common {
    /// Flat key=value config file (keys: problem, estimator, centering,
    /// scheme, h, T, burn_in, replicas, seed).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Problem name from the registry.
    #[arg(long)]
    problem: Option<String>,
    /// Estimator: lr, clr1, clr2, clr2-general.
    #[arg(long)]
    estimator: Option<String>,
    /// Centering: empirical, oracle, optimal.
    #[arg(long)]
    centering: Option<String>,
    /// Scheme: em, it2 (defaults to the estimator's natural scheme).
    #[arg(long)]
    scheme: Option<String>,
    /// Step size.
    #[arg(long)]
    h: Option<f64>,
    /// Accumulation horizon T (physical time).
    #[arg(long)]
    horizon: Option<f64>,
    /// Burn-in horizon (physical time).
    #[arg(long = "burn-in")]
    burn_in: Option<f64>,
    /// Number of independent replicas.
    #[arg(long)]
    replicas: Option<usize>,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (0 = library default).
    #[arg(long)]
    workers: Option<usize>,
    /// Spectral reference resolution per dimension (default 128 in 1D,
    /// 48 in 2D).
    #[arg(long)]
    resolution: Option<usize>,
    /// Write CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Append a wall_time_s column (forfeits byte-stable output).
    #[arg(long)]
    timings: bool,
}

#[derive(Args)]
struct EstimateArgs {
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    /// Comma-separated step sizes (default 0.08,0.04,0.02,0.01,0.005).
    #[arg(long)]
    grid: Option<String>,
    /// Also write `x y yerr` plot triples to this file.
    #[arg(long = "plot-data")]
    plot_data: Option<PathBuf>,
}

#[derive(Args)]
struct ScanArgs {
    #[command(flatten)]
    common: Common,
    /// Comma-separated horizons (default 5,10,20,50).
    #[arg(long)]
    grid: Option<String>,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    problem: Option<String>,
    /// Spectral resolution per dimension.
    #[arg(long)]
    resolution: Option<usize>,
    /// Step for the finite-difference response cross-check.
    #[arg(long = "fd-eps")]
    fd_eps: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// All run settings after layering defaults, config file, and flags.
#[derive(Debug, Clone)]
struct Settings {
    problem: String,
    estimator: String,
    centering: String,
    scheme: Option<String>,
    h: f64,
    t_horizon: f64,
    burn_in: f64,
    replicas: usize,
    seed: u64,
    workers: usize,
    resolution: Option<usize>,
    timings: bool,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            problem: "cosine1d".into(),
            estimator: "clr2".into(),
            centering: "empirical".into(),
            scheme: None,
            h: 0.02,
            t_horizon: 20.0,
            burn_in: 20.0,
            replicas: 10_000,
            seed: 0,
            workers: 0,
            resolution: None,
            timings: false,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Validation(format!("config value for '{key}' is not valid: '{v}'")))
}

fn apply_config(s: &mut Settings, path: &Path) -> Result<()> {
    let text = fs::read_to_string(path).map_err(|e| {
        Error::Validation(format!("cannot read config {}: {e}", path.display()))
    })?;
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::Validation(format!(
                "config line {} is not key=value: '{raw}'",
                idx + 1
            )));
        };
        let (k, v) = (k.trim(), v.trim());
        match k {
            "problem" => s.problem = v.to_string(),
            "estimator" => s.estimator = v.to_string(),
            "centering" => s.centering = v.to_string(),
            "scheme" => s.scheme = Some(v.to_string()),
            "h" => s.h = parse_num(k, v)?,
            "T" => s.t_horizon = parse_num(k, v)?,
            "burn_in" => s.burn_in = parse_num(k, v)?,
            "replicas" => s.replicas = parse_num(k, v)?,
            "seed" => s.seed = parse_num(k, v)?,
            _ => {
                return Err(Error::Validation(format!(
                    "unknown config key '{k}' (line {})",
                    idx + 1
                )))
            }
        }
    }
    Ok(())
}

fn resolve_settings(common: &Common) -> Result<Settings> {
    let mut s = Settings::default();
    if let Some(path) = &common.config {
        apply_config(&mut s, path)?;
    }
    if let Some(v) = &common.problem {
        s.problem = v.clone();
    }
    if let Some(v) = &common.estimator {
        s.estimator = v.clone();
    }
    if let Some(v) = &common.centering {
        s.centering = v.clone();
    }
    if let Some(v) = &common.scheme {
        s.scheme = Some(v.clone());
    }
    if let Some(v) = common.h {
        s.h = v;
    }
    if let Some(v) = common.horizon {
        s.t_horizon = v;
    }
    if let Some(v) = common.burn_in {
        s.burn_in = v;
    }
    if let Some(v) = common.replicas {
        s.replicas = v;
    }
    if let Some(v) = common.seed {
        s.seed = v;
    }
    if let Some(v) = common.workers {
        s.workers = v;
    }
    if common.resolution.is_some() {
        s.resolution = common.resolution;
    }
    s.timings = common.timings;
    Ok(s)
}

struct ResolvedRun {
    problem: Problem<f64>,
    problem_name: String,
    estimator: Estimator,
    scheme: Scheme,
    centering_kind: String,
    params: RunParams,
    resolution: usize,
}

fn resolve_run(s: &Settings) -> Result<ResolvedRun> {
    let estimator = Estimator::parse(&s.estimator).ok_or_else(|| {
        Error::Validation(format!(
            "unknown estimator '{}' (expected lr, clr1, clr2, clr2-general)",
            s.estimator
        ))
    })?;
    let scheme = match &s.scheme {
        Some(v) => Scheme::parse(v).ok_or_else(|| {
            Error::Validation(format!("unknown scheme '{v}' (expected em, it2)"))
        })?,
        None => match estimator {
            Estimator::Lr | Estimator::Clr1 => Scheme::Em,
            _ => Scheme::It2,
        },
    };
    match s.centering.as_str() {
        "empirical" | "oracle" | "optimal" => {}
        other => {
            return Err(Error::Validation(format!(
                "unknown centering '{other}' (expected empirical, oracle, optimal)"
            )))
        }
    }
    let problem = make_problem::<f64>(&s.problem)?;
    let report = validate_problem(&problem);
    if !report.is_ok() {
        return Err(Error::validation_report(&report));
    }
    let resolution = s.resolution.unwrap_or_else(|| default_resolution(problem.dim));
    Ok(ResolvedRun {
        problem_name: s.problem.clone(),
        estimator,
        scheme,
        centering_kind: s.centering.clone(),
        params: RunParams {
            scheme,
            estimator,
            h: s.h,
            t_horizon: s.t_horizon,
            burn_in: s.burn_in,
            replicas: s.replicas,
            seed: s.seed,
            workers: s.workers,
        },
        problem,
        resolution,
    })
}

fn io_err(e: std::io::Error) -> Error {
    Error::Validation(format!("io error: {e}"))
}

fn open_out(out: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match out {
        Some(path) => Box::new(fs::File::create(path).map_err(io_err)?),
        None => Box::new(std::io::stdout()),
    })
}

fn parse_grid(text: &str) -> Result<Vec<f64>> {
    let mut grid = Vec::new();
    for part in text.split(',') {
        let v: f64 = part
            .trim()
            .parse()
            .map_err(|_| Error::Validation(format!("grid entry '{part}' is not a number")))?;
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::Validation(format!(
                "grid entries must be positive, got {v}"
            )));
        }
        grid.push(v);
    }
    if grid.is_empty() {
        return Err(Error::Validation("grid must not be empty".into()));
    }
    Ok(grid)
}

/// Resolve the centering policy, solving the reference problem when the
/// oracle center is requested.
fn resolve_centering(kind: &str, mu_theta: f64) -> Centering<f64> {
    match kind {
        "oracle" => Centering::Oracle(mu_theta),
        "optimal" => Centering::Optimal,
        _ => Centering::Empirical,
    }
}

fn cmd_estimate(args: &EstimateArgs) -> Result<()> {
    let s = resolve_settings(&args.common)?;
    let run = resolve_run(&s)?;
    let reference = solve_reference(&run.problem, run.resolution)?;
    let centering = resolve_centering(&run.centering_kind, reference.mu_theta);

    let start = Instant::now();
    let summary = estimate(&run.problem, &run.params, centering)?;
    let wall = start.elapsed().as_secs_f64();
    let row = SweepRow {
        h: run.params.h,
        t_horizon: run.params.t_horizon,
        n_steps: run.params.n_steps(),
        replicas: run.params.replicas,
        estimate: summary.estimate,
        std_error: summary.std_error,
        variance: summary.variance,
        oracle_ref: reference.rho,
        abs_error: (summary.estimate - reference.rho).abs(),
        wall_time_s: wall,
        status: None,
    };
    let mut out = open_out(&args.common.out)?;
    write_sweep_csv(
        &mut out,
        &run.problem_name,
        run.scheme,
        run.estimator,
        &[row],
        s.timings,
    )
    .map_err(io_err)?;
    if summary.centering_fallback {
        writeln!(out, "# note: optimal centering degenerated; used empirical").map_err(io_err)?;
    }
    Ok(())
}

fn cmd_sweep(args: &SweepArgs) -> Result<()> {
    let s = resolve_settings(&args.common)?;
    let run = resolve_run(&s)?;
    let grid = match &args.grid {
        Some(g) => parse_grid(g)?,
        None => vec![0.08, 0.04, 0.02, 0.01, 0.005],
    };
    let reference = solve_reference(&run.problem, run.resolution)?;
    let centering = resolve_centering(&run.centering_kind, reference.mu_theta);

    let rows = run_sweep(&run.problem, &run.params, &grid, centering, reference.rho);
    let mut out = open_out(&args.common.out)?;
    write_sweep_csv(
        &mut out,
        &run.problem_name,
        run.scheme,
        run.estimator,
        &rows,
        s.timings,
    )
    .map_err(io_err)?;
    if let Some(path) = &args.plot_data {
        let mut pd = fs::File::create(path).map_err(io_err)?;
        write_plot_data(&mut pd, &rows).map_err(io_err)?;
    }
    match fit_rate(&rows) {
        Ok(f) => {
            writeln!(
                out,
                "# fit slope={} intercept={} stderr_slope={} used={} excluded={}",
                f.slope, f.intercept, f.stderr_slope, f.used, f.excluded
            )
            .map_err(io_err)?;
            Ok(())
        }
        Err(Error::Inconclusive(msg)) => {
            writeln!(out, "# fit inconclusive: {msg}").map_err(io_err)?;
            out.flush().map_err(io_err)?;
            Err(Error::Inconclusive(msg))
        }
        Err(other) => Err(other),
    }
}

fn cmd_variance_scan(args: &ScanArgs) -> Result<()> {
    let s = resolve_settings(&args.common)?;
    let run = resolve_run(&s)?;
    if run.estimator == Estimator::Lr {
        return Err(Error::Validation(
            "variance-scan compares a centered estimator against the uncentered baseline; \
             choose clr1, clr2, or clr2-general"
                .into(),
        ));
    }
    let grid = match &args.grid {
        Some(g) => parse_grid(g)?,
        None => vec![5.0, 10.0, 20.0, 50.0],
    };
    let centering = if run.centering_kind == "oracle" {
        let reference = solve_reference(&run.problem, run.resolution)?;
        Centering::Oracle(reference.mu_theta)
    } else {
        resolve_centering(&run.centering_kind, 0.0)
    };
    let rows = variance_scan(&run.problem, &run.params, &grid, centering);
    let mut out = open_out(&args.common.out)?;
    write_variance_csv(
        &mut out,
        &run.problem_name,
        run.scheme,
        run.estimator,
        run.params.h,
        run.params.replicas,
        &rows,
    )
    .map_err(io_err)
}

fn cmd_oracle(args: &OracleArgs) -> Result<()> {
    let mut s = Settings::default();
    if let Some(path) = &args.config {
        apply_config(&mut s, path)?;
    }
    if let Some(v) = &args.problem {
        s.problem = v.clone();
    }
    let p = make_problem::<f64>(&s.problem)?;
    let report = validate_problem(&p);
    if !report.is_ok() {
        return Err(Error::validation_report(&report));
    }
    let m = args.resolution.unwrap_or_else(|| default_resolution(p.dim));
    let eps = args.fd_eps.unwrap_or(1e-3);
    let diag = reference_diagnostics(&p, m)?;
    let fd = response_fd(&p, m, eps)?;
    let mut out = open_out(&args.out)?;
    writeln!(
        out,
        "problem,m,rho,rho_fd,abs_diff,mu_theta,stationary_residual,poisson_residual,density_min"
    )
    .map_err(io_err)?;
    writeln!(
        out,
        "{},{},{},{},{},{},{},{},{}",
        s.problem,
        m,
        diag.rho,
        fd,
        (diag.rho - fd).abs(),
        diag.mu_theta,
        diag.stationary_residual,
        diag.poisson_residual,
        diag.density_min
    )
    .map_err(io_err)
}

fn check(name: &str, ok: bool, detail: String) -> Result<()> {
    if ok {
        println!("ok: {name}");
        Ok(())
    } else {
        Err(Error::Numerical(format!("selftest '{name}' failed: {detail}")))
    }
}

fn cmd_selftest() -> Result<()> {
    // Problem registry validates cleanly.
    for name in REGISTRY {
        let p = make_problem::<f64>(name)?;
        let report = validate_problem(&p);
        check(
            &format!("problem {name} validates"),
            report.is_ok(),
            report.to_string(),
        )?;
    }

    // Frozen random-number references.
    let z = standard_normal_from_u64(1_234_567_890_123_456_789);
    check(
        "normal transform reference",
        (z - (-1.4990829319923495)).abs() < 1e-12,
        format!("got {z}"),
    )?;
    let q = inverse_normal_cdf(0.975);
    check(
        "inverse normal quantile",
        (q - 1.959963984540054).abs() < 1e-12,
        format!("got {q}"),
    )?;

    // Frozen integrator step on the benchmark problem.
    let p = make_problem::<f64>("cosine1d").unwrap();
    let mut x = [0.25];
    let mut scratch = StepScratch::new(1);
    em_step(&p, &mut x, 0.1, &[0.05], &mut scratch);
    check(
        "integrator reference step",
        (x[0] - 0.634869943477634).abs() < 1e-14,
        format!("got {}", x[0]),
    )?;

    // Quadrature reproduces Gaussian moments.
    let gh = GaussHermite::new(32);
    let m4: f64 = gh.expect(|g: f64| g.powi(4));
    let m6: f64 = gh.expect(|g: f64| g.powi(6));
    check(
        "quadrature moments",
        (m4 - 3.0).abs() < 1e-10 && (m6 - 15.0).abs() < 1e-9,
        format!("E[G^4]={m4} E[G^6]={m6}"),
    )?;

    // Spectral solver against closed forms.
    let pc = make_problem::<f64>("const1d").unwrap();
    let r = solve_reference(&pc, 64)?;
    check(
        "constant-drift response is zero",
        r.rho.abs() < 1e-10,
        format!("rho = {}", r.rho),
    )?;
    let rb = solve_reference(&p, 64)?;
    check(
        "benchmark response reference",
        (rb.rho - (-0.11582426280557941)).abs() < 1e-9,
        format!("rho = {}", rb.rho),
    )?;

    // Weight processes are mean-zero martingales.
    let params = RunParams {
        scheme: Scheme::Em,
        estimator: Estimator::Clr1,
        h: 0.01,
        t_horizon: 1.0,
        burn_in: 0.0,
        replicas: 2000,
        seed: 0,
        workers: 0,
    };
    let results = simulate(&p, &params)?;
    let s = results.len() as f64;
    let mean_z = results.iter().map(|r| r.weight).sum::<f64>() / s;
    let var_z = results
        .iter()
        .map(|r| (r.weight - mean_z).powi(2))
        .sum::<f64>()
        / (s - 1.0);
    let se = (var_z / s).sqrt();
    check(
        "weight process centered",
        mean_z.abs() <= 4.0 * se,
        format!("mean {mean_z} vs 4se {}", 4.0 * se),
    )?;

    // Constant-coefficient weight second moment: E[Z_N^2] = N h |F/sigma|^2.
    let params_c = RunParams {
        scheme: Scheme::Em,
        estimator: Estimator::Clr1,
        h: 0.01,
        t_horizon: 1.0,
        burn_in: 0.0,
        replicas: 2000,
        seed: 0,
        workers: 0,
    };
    let results_c = simulate(&pc, &params_c)?;
    let mean_z2 = results_c.iter().map(|r| r.weight * r.weight).sum::<f64>() / s;
    let var_z2 = results_c
        .iter()
        .map(|r| (r.weight * r.weight - mean_z2).powi(2))
        .sum::<f64>()
        / (s - 1.0);
    let se_z2 = (var_z2 / s).sqrt();
    check(
        "weight second moment",
        (mean_z2 - 1.0).abs() <= 4.0 * se_z2,
        format!("E[Z^2] = {mean_z2} vs 1.0 +- {}", 4.0 * se_z2),
    )?;

    println!("selftest passed");
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match &cli.cmd {
        Cmd::Estimate(a) => cmd_estimate(a),
        Cmd::Sweep(a) => cmd_sweep(a),
        Cmd::VarianceScan(a) => cmd_variance_scan(a),
        Cmd::Oracle(a) => cmd_oracle(a),
        Cmd::Selftest => cmd_selftest(),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0u8,
                _ => 1u8,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Validation(_) => 1u8,
                Error::Numerical(_) => 2u8,
                Error::Inconclusive(_) => 3u8,
            })
        }
    }
}
