use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use exec_traj::commands::{run_compare, run_evaluate, run_simulate, run_solve, CmdError};
use exec_traj::config::RunConfig;

/// Batch front end for the trade-execution trajectory solver.
///
/// Exit codes: 0 success, 2 configuration error, 3 numeric failure
/// (diagnostics are still written), 1 I/O failure.
#[derive(Parser)]
#[command(name = "exec-traj", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides [output].dir from the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the optimal schedule and write trajectory + report files.
    Solve(CommonArgs),
    /// Evaluate the objective of a stored trajectory file.
    Evaluate {
        #[command(flatten)]
        common: CommonArgs,
        /// Trajectory file produced by `solve` (CSV or JSON).
        #[arg(long)]
        trajectory: PathBuf,
    },
    /// Monte Carlo moment verification and product-identity convergence.
    Simulate(CommonArgs),
    /// Compare the solved schedule against uniform and arithmetic benchmarks.
    Compare(CommonArgs),
}

fn load_config(args: &CommonArgs) -> Result<RunConfig, CmdError> {
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| CmdError::Config(format!("reading {}: {e}", args.config.display())))?;
    RunConfig::parse(&text).map_err(|e| CmdError::Config(e.to_string()))
}

fn dispatch(cli: Cli) -> Result<(), CmdError> {
    match &cli.command {
        Command::Solve(common) => {
            let cfg = load_config(common)?;
            let out = common.out.clone().unwrap_or_else(|| PathBuf::from(&cfg.out_dir));
            run_solve(&cfg, &out)
        }
        Command::Evaluate { common, trajectory } => {
            let cfg = load_config(common)?;
            run_evaluate(&cfg, trajectory)
        }
        Command::Simulate(common) => {
            let cfg = load_config(common)?;
            let out = common.out.clone().unwrap_or_else(|| PathBuf::from(&cfg.out_dir));
            run_simulate(&cfg, &out)
        }
        Command::Compare(common) => {
            let cfg = load_config(common)?;
            let out = common.out.clone().unwrap_or_else(|| PathBuf::from(&cfg.out_dir));
            run_compare(&cfg, &out)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {}", err.message());
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
