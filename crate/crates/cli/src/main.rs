//! `roagp`: simulate disturbances, run ROA assessments, validate model files.
//!
//! Exit codes: 0 success, 1 other runtime failure, 2 configuration error,
//! 3 trajectory divergence, 4 unstable equilibrium, 5 validation failure.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "roagp",
    version,
    about = "Online region-of-attraction assessment for DAE power-system models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the model through a branch disturbance and write the trajectory.
    Simulate(SimulateArgs),
    /// Run the sampling loop and write ROA estimates, a log and a snapshot.
    Assess(AssessArgs),
    /// Check a model file and print a report.
    Validate(ValidateArgs),
}

#[derive(Args)]
pub struct SimulateArgs {
    /// Model config (microgrid JSON or `{"builtin": ...}`).
    #[arg(long)]
    pub model: PathBuf,
    /// Trajectory CSV.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 20.0)]
    pub t_end: f64,
    #[arg(long, default_value_t = 0.01)]
    pub dt: f64,
    /// Convergence radius reported at `t_end`.
    #[arg(long, default_value_t = 1e-3)]
    pub xi: f64,
    /// Ignore any disturbance in the model config.
    #[arg(long, conflicts_with_all = ["branch", "time", "scale", "clear_after"])]
    pub no_disturbance: bool,
    /// 1-based branch index.
    #[arg(long)]
    pub branch: Option<usize>,
    /// Event time in seconds.
    #[arg(long)]
    pub time: Option<f64>,
    /// Susceptance factor while the event lasts.
    #[arg(long)]
    pub scale: Option<f64>,
    #[arg(long)]
    pub clear_after: Option<f64>,
    /// Write deviations from the equilibrium instead of absolute states.
    #[arg(long)]
    pub deviation: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args)]
pub struct AssessArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Assessment config JSON.
    #[arg(long)]
    pub assess: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides `max_steps`.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Overrides `delta`.
    #[arg(long)]
    pub delta: Option<f64>,
    /// Continue from a snapshot written by an earlier run.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Record per-sample wall time in the log (makes output non-reproducible).
    #[arg(long)]
    pub timing: bool,
}

#[derive(Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub model: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(args) => commands::simulate(&args),
        Command::Assess(args) => commands::assess(&args),
        Command::Validate(args) => commands::validate(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("roagp: {}", failure.message);
            ExitCode::from(failure.code as u8)
        }
    }
}
