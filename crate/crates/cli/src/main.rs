//! Command-line front end: config parsing, subcommand dispatch, and
//! deterministic result emission.
//!
//! Exit status: 0 on success, 2 on configuration/validation errors,
//! 3 on numerical failures.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use lattice_bsde_cli::commands::{run, validate, CliError, CommandContext};
use lattice_bsde_cli::config::RunConfig;

#[derive(Parser)]
#[command(
    name = "lattice-bsde",
    about = "Backward stochastic difference equations on minimal lattices",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the backward equation for a driver and terminal payoff.
    Solve(RunArgs),
    /// Robust representation of a concave g-expectation.
    Robust(RunArgs),
    /// Optimal monetary-utility investment.
    Invest(RunArgs),
    /// Market-clearing check for a set of agents.
    Equilibrium(RunArgs),
    /// Balance, gradient and basis invariant suites.
    Check(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Path to the JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory for summary.json and CSV tables.
    #[arg(long)]
    out: PathBuf,
    /// Seed for sampling-based checks; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Size of the thread pool for backward sweeps.
    #[arg(long)]
    threads: Option<usize>,
    /// Override of the command's main tolerance.
    #[arg(long)]
    tol: Option<f64>,
}

fn execute(name: &str, args: &RunArgs) -> Result<(), CliError> {
    if let Some(threads) = args.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| CliError::Validation(format!("threads: {e}")))?;
    }
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", args.config.display())))?;
    let parsed = RunConfig::parse(&text)?;
    validate(&parsed)?;
    let ctx = CommandContext {
        seed: args.seed.or(parsed.seed).unwrap_or(0),
        tol: args.tol,
        config: parsed,
    };
    run(name, &ctx, &args.out)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (name, args) = match &cli.command {
        Command::Solve(a) => ("solve", a),
        Command::Robust(a) => ("robust", a),
        Command::Invest(a) => ("invest", a),
        Command::Equilibrium(a) => ("equilibrium", a),
        Command::Check(a) => ("check", a),
    };
    match execute(name, args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Numerical(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}
