//! `turnpike-lab`: config-driven experiments for averaged LQ tracking.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 invalid input, 3 solver
//! not converged, 4 failed assumption check under `--require-pass`.

mod commands;
mod config;
mod error;
mod output;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::ExperimentConfig;
use error::CliError;

#[derive(Parser)]
#[command(name = "turnpike-lab", version, about = "Turnpike experiments for averaged LQ tracking")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the finite-horizon problem.
    SolveEvolutionary(Common),
    /// Solve the steady-state problem.
    SolveStationary(Common),
    /// Run the configured assumption checks.
    CheckAssumptions(Common),
    /// Solve both problems, measure the distance and fit an envelope.
    TurnpikeReport(Common),
    /// Time-averaged errors over a list of horizons.
    SweepHorizons(Common),
}

#[derive(Args)]
struct Common {
    /// JSON experiment configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory, overriding `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Sampling seed, overriding `ensemble.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Exit with code 4 when a check fails.
    #[arg(long)]
    require_pass: bool,
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("TURNPIKE_THREADS") else {
        return Ok(());
    };
    let threads: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|t| *t > 0)
        .ok_or_else(|| CliError::Validation(format!("TURNPIKE_THREADS: expected a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::Runtime(format!("thread pool: {e}")))
}

fn load(common: &Common) -> Result<ExperimentConfig, CliError> {
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.override_seed(seed)?;
    }
    if let Some(out) = &common.out {
        cfg.output.dir = Some(out.clone());
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    configure_threads()?;
    match cli.command {
        Command::SolveEvolutionary(c) => commands::solve_evolutionary_cmd(&load(&c)?),
        Command::SolveStationary(c) => commands::solve_stationary_cmd(&load(&c)?),
        Command::CheckAssumptions(c) => commands::check_assumptions_cmd(&load(&c)?, c.require_pass),
        Command::TurnpikeReport(c) => commands::turnpike_report_cmd(&load(&c)?),
        Command::SweepHorizons(c) => commands::sweep_horizons_cmd(&load(&c)?),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("turnpike-lab: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
