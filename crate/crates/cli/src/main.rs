//! Batch front end: parses a TOML run configuration, dispatches
//! subcommands, writes CSV tables (and optional SVG charts) and returns
//! machine-readable exit codes:
//!
//! - 0: success / all checks passed
//! - 1: usage or configuration error
//! - 2: mathematical precondition violated (well-posedness)
//! - 3: numerical failure (non-convergence, failed statistical checks)

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use jumphedge::EngineError;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn config(message: String) -> Self {
        Self { code: 1, message }
    }

    pub fn numerical(message: String) -> Self {
        Self { code: 3, message }
    }
}

impl From<EngineError> for CliError {
    fn from(e: EngineError) -> Self {
        let code = match &e {
            EngineError::NotWellPosed(_) | EngineError::InvalidModel(_) => 2,
            EngineError::NonConvergence(_) => 3,
            _ => 1,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self {
            code: 1,
            message: format!("io error: {e}"),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "jumphedge",
    about = "Exponential-utility hedging in pure-jump markets: well-posedness checks, \
             closed-form solvers and Monte Carlo verification"
)]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory for CSV/SVG files.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Override the [mc] seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the [mc] path count.
    #[arg(long, global = true)]
    paths: Option<usize>,
    /// Override the [mc] step count.
    #[arg(long, global = true)]
    steps: Option<usize>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Also emit SVG line charts next to the CSV files.
    #[arg(long, global = true)]
    svg: bool,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check well-posedness of the configured market.
    Check,
    /// Claim-free optimal position: minimize the generator at zero jump
    /// control.
    OptimalStrategy,
    /// Solve the cross-hedging problem for a log claim.
    SolveAffine,
    /// Solve the linear-generator problem for an exponential claim.
    SolveExp,
    /// Simulate forward paths and write per-node summary statistics.
    Simulate,
    /// Monte Carlo optimality and residual verification.
    Verify,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode, CliError> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::config(format!("thread pool: {e}")))?;
    }
    let config_path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::config("--config <path> is required".to_string()))?;
    let text = std::fs::read_to_string(config_path).map_err(|e| {
        CliError::config(format!("cannot read {}: {e}", config_path.display()))
    })?;
    let cfg = config::parse(&text)?;

    let opts = commands::Options {
        out: cli.out.clone(),
        seed: cli.seed,
        paths: cli.paths,
        steps: cli.steps,
        svg: cli.svg,
    };
    match cli.cmd {
        Command::Check => commands::check(&cfg),
        Command::OptimalStrategy => commands::optimal_strategy(&cfg, &opts),
        Command::SolveAffine => commands::solve_affine(&cfg, &opts),
        Command::SolveExp => commands::solve_exp(&cfg, &opts),
        Command::Simulate => commands::simulate(&cfg, &opts),
        Command::Verify => commands::verify(&cfg, &opts),
    }
}
