//! Implementations behind the CLI subcommands: solve, evaluate, simulate and
//! compare. Each writes deterministic data files into the output directory;
//! timing goes to stderr so repeated runs are byte-identical.

use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::Serialize;

use crate::baseline::{ac_trajectory, AcParams};
use crate::config::{OutputFormat, RunConfig, SimTrajectory};
use crate::error::Error;
use crate::model::Trajectory;
use crate::moments;
use crate::perturbation::{solve_f2, optimality_residual};
use crate::simulate::{product_identity_refinement, xi_stats, ProductIdentity, SimConfig};
use crate::variational::{solve_f1, SolverDetail};

/// Command failure classified by exit code: config errors exit 2, numeric
/// failures exit 3, I/O problems exit 1.
#[derive(Debug)]
pub enum CmdError {
    Config(String),
    Numeric(String),
    Io(String),
}

impl CmdError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CmdError::Io(_) => 1,
            CmdError::Config(_) => 2,
            CmdError::Numeric(_) => 3,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CmdError::Config(m) | CmdError::Numeric(m) | CmdError::Io(m) => m,
        }
    }
}

type CmdResult = Result<(), CmdError>;

fn io_err(context: &str, e: std::io::Error) -> CmdError {
    CmdError::Io(format!("{context}: {e}"))
}

/// 17-significant-digit float serialization, stable across runs.
fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

fn write_file(path: &Path, contents: &str) -> CmdResult {
    fs::write(path, contents).map_err(|e| io_err(&format!("writing {}", path.display()), e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CmdResult {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| CmdError::Io(format!("serializing {}: {e}", path.display())))?;
    text.push('\n');
    write_file(path, &text)
}

fn ensure_dir(dir: &Path) -> CmdResult {
    fs::create_dir_all(dir).map_err(|e| io_err(&format!("creating {}", dir.display()), e))
}

// ---------------------------------------------------------------------------
// solve
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct F2Report {
    converged: bool,
    iterations: usize,
    gradient_norm: f64,
    basis_size: usize,
    identity_residual_sup: f64,
    identity_residual_integral: f64,
}

#[derive(Serialize)]
struct SolveReport {
    command: &'static str,
    seed: u64,
    lambda: f64,
    converged: bool,
    iterations: usize,
    objective: Option<f64>,
    expected_shortfall: Option<f64>,
    variance_term: Option<f64>,
    objective_integral_form: Option<f64>,
    residual_sup: f64,
    boundary_error: f64,
    initial_slope: f64,
    f2: Option<F2Report>,
    error: Option<String>,
}

#[derive(Serialize)]
struct FailureReport<'a> {
    command: &'a str,
    converged: bool,
    error: String,
}

fn report_failure(dir: &Path, command: &'static str, err: &Error) -> CmdError {
    let report =
        FailureReport { command, converged: false, error: err.to_string() };
    let _ = write_json(&dir.join("report.json"), &report);
    CmdError::Numeric(err.to_string())
}

struct Solved {
    full: Trajectory,
    f1: Trajectory,
    report: SolveReport,
}

fn solve_pipeline(cfg: &RunConfig, dir: &Path) -> Result<Solved, CmdError> {
    let (f1, shoot_report) = solve_f1(&cfg.impact, &cfg.market, &cfg.problem, &cfg.shooting)
        .map_err(|e| report_failure(dir, "solve", &e))?;
    let initial_slope = match shoot_report.detail {
        SolverDetail::Shooting { initial_slope } => initial_slope,
        _ => f64::NAN,
    };

    let mut converged = shoot_report.converged;
    let mut iterations = shoot_report.iterations;
    let mut f2_report = None;
    let full = if cfg.problem.lambda > 0.0 {
        let (full, report) = solve_f2(&cfg.impact, &cfg.market, &cfg.problem, &f1, cfg.basis_size)
            .map_err(|e| report_failure(dir, "solve", &e))?;
        converged = converged && report.converged;
        iterations += report.iterations;
        let (gradient_norm, basis_size) = match report.detail {
            SolverDetail::BasisMinimize { gradient_norm, basis_size } => {
                (gradient_norm, basis_size)
            }
            _ => (f64::NAN, cfg.basis_size),
        };
        let f2_traj = difference(&full, &f1);
        let identity = optimality_residual(&cfg.impact, &cfg.market, &cfg.problem, &full, &f2_traj)
            .map_err(|e| report_failure(dir, "solve", &e))?;
        f2_report = Some(F2Report {
            converged: report.converged,
            iterations: report.iterations,
            gradient_norm,
            basis_size,
            identity_residual_sup: identity.sup_norm,
            identity_residual_integral: identity.integral,
        });
        full
    } else {
        f1.clone()
    };

    let objective = moments::objective(&cfg.impact, &cfg.market, &cfg.problem, &full).ok();
    let integral =
        moments::objective_integral_form(&cfg.impact, &cfg.market, &cfg.problem, &full).ok();
    let seed = cfg.sim.as_ref().map(|s| s.config.seed).unwrap_or(0);
    let report = SolveReport {
        command: "solve",
        seed,
        lambda: cfg.problem.lambda,
        converged,
        iterations,
        objective: objective.as_ref().map(|o| o.j),
        expected_shortfall: objective.as_ref().map(|o| o.expected_shortfall),
        variance_term: objective.as_ref().map(|o| o.variance_term),
        objective_integral_form: integral,
        residual_sup: shoot_report.residual_sup,
        boundary_error: shoot_report.boundary_error,
        initial_slope,
        f2: f2_report,
        error: None,
    };
    Ok(Solved { full, f1, report })
}

fn difference(a: &Trajectory, b: &Trajectory) -> Trajectory {
    let values = a.values().iter().zip(b.values()).map(|(x, y)| x - y).collect();
    let rates = a.rates().iter().zip(b.rates()).map(|(x, y)| x - y).collect();
    Trajectory::from_parts_unchecked(a.times().to_vec(), values, rates)
}

fn write_trajectory_file(
    dir: &Path,
    format: OutputFormat,
    full: &Trajectory,
    f1: &Trajectory,
) -> CmdResult {
    let f2 = difference(full, f1);
    match format {
        OutputFormat::Csv => {
            let mut text = String::from("t,f,c,f1,f2\n");
            for i in 0..full.len() {
                text.push_str(&format!(
                    "{},{},{},{},{}\n",
                    fmt17(full.times()[i]),
                    fmt17(full.values()[i]),
                    fmt17(full.rates()[i]),
                    fmt17(f1.values()[i]),
                    fmt17(f2.values()[i]),
                ));
            }
            write_file(&dir.join("trajectory.csv"), &text)
        }
        OutputFormat::Json => {
            #[derive(Serialize)]
            struct TrajectoryJson<'a> {
                t: &'a [f64],
                f: &'a [f64],
                c: &'a [f64],
                f1: &'a [f64],
                f2: &'a [f64],
            }
            write_json(
                &dir.join("trajectory.json"),
                &TrajectoryJson {
                    t: full.times(),
                    f: full.values(),
                    c: full.rates(),
                    f1: f1.values(),
                    f2: f2.values(),
                },
            )
        }
    }
}

pub fn run_solve(cfg: &RunConfig, out_dir: &Path) -> CmdResult {
    let started = Instant::now();
    ensure_dir(out_dir)?;
    let solved = solve_pipeline(cfg, out_dir)?;
    write_trajectory_file(out_dir, cfg.format, &solved.full, &solved.f1)?;
    write_json(&out_dir.join("report.json"), &solved.report)?;
    eprintln!("solve finished in {:.1} ms", started.elapsed().as_secs_f64() * 1e3);
    println!(
        "solved: J = {}, residual_sup = {:.3e}, converged = {}",
        solved.report.objective.map(fmt17).unwrap_or_else(|| "n/a".into()),
        solved.report.residual_sup,
        solved.report.converged
    );
    if !solved.report.converged {
        return Err(CmdError::Numeric("solver did not converge; see report.json".into()));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

fn parse_trajectory_csv(text: &str) -> Result<Trajectory, CmdError> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| CmdError::Config("trajectory file is empty".into()))?;
    let cols: Vec<&str> = header.trim().split(',').collect();
    if cols != ["t", "f", "c"] && cols != ["t", "f", "c", "f1", "f2"] {
        return Err(CmdError::Config(format!(
            "trajectory schema mismatch: header `{}` (expected `t,f,c` or `t,f,c,f1,f2`)",
            header.trim()
        )));
    }
    let width = cols.len();
    let mut times = Vec::new();
    let mut values = Vec::new();
    let mut rates = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.trim().split(',').collect();
        if fields.len() != width {
            return Err(CmdError::Config(format!(
                "trajectory schema mismatch on line {}: {} fields, expected {width}",
                lineno + 2,
                fields.len()
            )));
        }
        let parse = |idx: usize| -> Result<f64, CmdError> {
            fields[idx].parse::<f64>().map_err(|_| {
                CmdError::Config(format!(
                    "trajectory schema mismatch on line {}: `{}` is not a number",
                    lineno + 2,
                    fields[idx]
                ))
            })
        };
        times.push(parse(0)?);
        values.push(parse(1)?);
        rates.push(parse(2)?);
    }
    Trajectory::new(times, values, rates).map_err(|e| CmdError::Config(e.to_string()))
}

fn parse_trajectory_json(text: &str) -> Result<Trajectory, CmdError> {
    #[derive(serde::Deserialize)]
    struct TrajectoryJson {
        t: Vec<f64>,
        f: Vec<f64>,
        c: Vec<f64>,
    }
    let parsed: TrajectoryJson = serde_json::from_str(text)
        .map_err(|e| CmdError::Config(format!("trajectory schema mismatch: {e}")))?;
    Trajectory::new(parsed.t, parsed.f, parsed.c).map_err(|e| CmdError::Config(e.to_string()))
}

#[derive(Serialize)]
struct EvaluateReport {
    command: &'static str,
    lambda: f64,
    objective: f64,
    expected_shortfall: f64,
    variance_term: f64,
    objective_integral_form: f64,
    discrepancy: f64,
}

pub fn run_evaluate(cfg: &RunConfig, trajectory_path: &Path) -> CmdResult {
    let text = fs::read_to_string(trajectory_path)
        .map_err(|e| io_err(&format!("reading {}", trajectory_path.display()), e))?;
    let traj = if trajectory_path.extension().and_then(|e| e.to_str()) == Some("json") {
        parse_trajectory_json(&text)?
    } else {
        parse_trajectory_csv(&text)?
    };

    let classify = |e: Error| match e {
        Error::BoundaryViolation(_) | Error::GridMismatch(_) | Error::InvalidParam(_) => {
            CmdError::Config(e.to_string())
        }
        other => CmdError::Numeric(other.to_string()),
    };
    let o = moments::objective(&cfg.impact, &cfg.market, &cfg.problem, &traj).map_err(classify)?;
    let ji = moments::objective_integral_form(&cfg.impact, &cfg.market, &cfg.problem, &traj)
        .map_err(|e| CmdError::Numeric(e.to_string()))?;
    let report = EvaluateReport {
        command: "evaluate",
        lambda: cfg.problem.lambda,
        objective: o.j,
        expected_shortfall: o.expected_shortfall,
        variance_term: o.variance_term,
        objective_integral_form: ji,
        discrepancy: (o.j - ji).abs(),
    };
    let text = serde_json::to_string_pretty(&report)
        .map_err(|e| CmdError::Io(format!("serializing evaluation: {e}")))?;
    println!("{text}");
    Ok(())
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct SimulateReport {
    command: &'static str,
    seed: u64,
    n_paths: usize,
    n_steps: usize,
    scheme: crate::simulate::Scheme,
    antithetic: bool,
    trajectory: &'static str,
    xi_mean: f64,
    xi_mean_se: f64,
    xi_second: f64,
    xi_second_se: f64,
    shortfall_mean: f64,
    shortfall_var: f64,
    sup_product_error: f64,
    target_mean: f64,
    target_second: f64,
    z_mean: f64,
    z_second: f64,
    refinement: Vec<ProductIdentity>,
}

fn z_score(sample: f64, target: f64, se: f64) -> f64 {
    let diff = sample - target;
    if se > 1e-300 {
        diff / se
    } else if diff.abs() <= 1e-9 * (1.0 + target.abs()) {
        0.0
    } else {
        f64::INFINITY
    }
}

/// Paths used for the step-refinement convergence table.
const REFINEMENT_PATHS: usize = 100;

pub fn run_simulate(cfg: &RunConfig, out_dir: &Path) -> CmdResult {
    let sim = cfg
        .sim
        .as_ref()
        .ok_or_else(|| CmdError::Config("simulate requires a [sim] section".into()))?;
    ensure_dir(out_dir)?;

    let (traj, label): (Trajectory, &'static str) = match sim.trajectory {
        SimTrajectory::Uniform => (Trajectory::uniform(&cfg.problem, 1000), "uniform"),
        SimTrajectory::Solved => {
            let solved = solve_pipeline(cfg, out_dir)?;
            (solved.full, "solved")
        }
    };

    let numeric = |e: Error| CmdError::Numeric(e.to_string());
    let stats = xi_stats(&cfg.impact, &cfg.market, &traj, &sim.config).map_err(numeric)?;

    // quadrature targets on the simulation grid so the sigma = 0 degenerate
    // case matches exactly
    let on_sim_grid = traj.resample(sim.config.n_steps);
    let horizon = on_sim_grid.horizon();
    let target_mean =
        moments::mean_xi(&cfg.impact, &cfg.market, &on_sim_grid, horizon).map_err(numeric)?;
    let target_second = moments::second_moment_xi(&cfg.impact, &cfg.market, &on_sim_grid, horizon)
        .map_err(numeric)?;
    let z_mean = z_score(stats.xi_mean, target_mean, stats.xi_mean_se);
    let z_second = z_score(stats.xi_second, target_second, stats.xi_second_se);

    let refinement = if sim.refinement.is_empty() {
        Vec::new()
    } else {
        let table_cfg = SimConfig {
            n_paths: sim.config.n_paths.min(REFINEMENT_PATHS),
            ..sim.config
        };
        product_identity_refinement(&cfg.impact, &cfg.market, &traj, &table_cfg, &sim.refinement)
            .map_err(numeric)?
    };

    let report = SimulateReport {
        command: "simulate",
        seed: sim.config.seed,
        n_paths: sim.config.n_paths,
        n_steps: sim.config.n_steps,
        scheme: sim.config.scheme,
        antithetic: sim.config.antithetic,
        trajectory: label,
        xi_mean: stats.xi_mean,
        xi_mean_se: stats.xi_mean_se,
        xi_second: stats.xi_second,
        xi_second_se: stats.xi_second_se,
        shortfall_mean: stats.shortfall_mean,
        shortfall_var: stats.shortfall_var,
        sup_product_error: stats.sup_product_error,
        target_mean,
        target_second,
        z_mean,
        z_second,
        refinement,
    };
    write_json(&out_dir.join("simstats.json"), &report)?;
    println!(
        "simulated {} paths: z_mean = {:.3}, z_second = {:.3}, sup identity error = {:.3e}",
        sim.config.n_paths, z_mean, z_second, stats.sup_product_error
    );
    if !z_mean.is_finite()
        || !z_second.is_finite()
        || z_mean.abs() > 5.0
        || z_second.abs() > 5.0
    {
        return Err(CmdError::Numeric(format!(
            "z-score beyond 5 flags an implementation inconsistency (z_mean = {z_mean:.3}, z_second = {z_second:.3})"
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// compare
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct CompareReport {
    command: &'static str,
    lambda: f64,
    kappa: f64,
    min_gap_vs_ac: f64,
    min_gap_vs_uniform: f64,
}

pub fn run_compare(cfg: &RunConfig, out_dir: &Path) -> CmdResult {
    ensure_dir(out_dir)?;
    let solved = solve_pipeline(cfg, out_dir)?;
    let ours = &solved.full;

    let params = AcParams::from_market(&cfg.impact, &cfg.market, &cfg.problem)
        .map_err(|e| CmdError::Config(e.to_string()))?;
    let ac = ac_trajectory(&params, &cfg.problem, ours.times())
        .map_err(|e| CmdError::Numeric(e.to_string()))?;
    let rate = cfg.problem.shares / cfg.problem.horizon;
    let uniform: Vec<f64> = ours.times().iter().map(|&t| rate * t).collect();

    match cfg.format {
        OutputFormat::Csv => {
            let mut text = String::from("t,f_ours,f_ac,f_uniform\n");
            for i in 0..ours.len() {
                text.push_str(&format!(
                    "{},{},{},{}\n",
                    fmt17(ours.times()[i]),
                    fmt17(ours.values()[i]),
                    fmt17(ac.values()[i]),
                    fmt17(uniform[i]),
                ));
            }
            write_file(&out_dir.join("compare.csv"), &text)?;
        }
        OutputFormat::Json => {
            #[derive(Serialize)]
            struct CompareJson<'a> {
                t: &'a [f64],
                f_ours: &'a [f64],
                f_ac: &'a [f64],
                f_uniform: &'a [f64],
            }
            write_json(
                &out_dir.join("compare.json"),
                &CompareJson {
                    t: ours.times(),
                    f_ours: ours.values(),
                    f_ac: ac.values(),
                    f_uniform: &uniform,
                },
            )?;
        }
    }

    let min_gap_vs_ac = ours
        .values()
        .iter()
        .zip(ac.values())
        .fold(f64::INFINITY, |m, (a, b)| m.min(a - b));
    let min_gap_vs_uniform = ours
        .values()
        .iter()
        .zip(&uniform)
        .fold(f64::INFINITY, |m, (a, b)| m.min(a - b));
    let report = CompareReport {
        command: "compare",
        lambda: cfg.problem.lambda,
        kappa: params.kappa,
        min_gap_vs_ac,
        min_gap_vs_uniform,
    };
    write_json(&out_dir.join("compare_summary.json"), &report)?;
    println!(
        "compared against the arithmetic benchmark: min(f_ours - f_ac) = {}",
        fmt17(min_gap_vs_ac)
    );
    if !solved.report.converged {
        return Err(CmdError::Numeric("solver did not converge; see report.json".into()));
    }
    Ok(())
}
