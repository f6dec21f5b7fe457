use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use riskpia::commands::{self, RunOptions};
use riskpia::config;

#[derive(Parser)]
#[command(name = "riskpia", version, about = "Risk-sensitive policy improvement on certified eigenvalue grids")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate the model assumptions (exit 2 on any failure).
    Check(Args),
    /// Run policy improvement on the primary grid and write the run artifacts.
    Solve(Args),
    /// Box-size and mesh refinement studies.
    Refine(Args),
    /// Brute-force every stationary policy on a tiny grid.
    Oracle(Args),
    /// Monte Carlo checks against a solve artifact.
    Simulate(Args),
}

#[derive(clap::Args)]
struct Args {
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides `[output] dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Monte Carlo seed (overrides `[mc] seed`).
    #[arg(long)]
    seed: Option<u64>,
    /// Run maximization even when the initialization guard fails.
    #[arg(long)]
    allow_guard_fail: bool,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (name, args) = match &cli.command {
        Command::Check(a) => ("check", a),
        Command::Solve(a) => ("solve", a),
        Command::Refine(a) => ("refine", a),
        Command::Oracle(a) => ("oracle", a),
        Command::Simulate(a) => ("simulate", a),
    };
    if let Some(n) = args.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(commands::EXIT_ERROR as u8);
        }
    }
    let opts = RunOptions {
        out: args.out.clone(),
        seed: args.seed,
        allow_guard_fail: args.allow_guard_fail,
    };
    let code = config::load(&args.config)
        .map_err(anyhow::Error::from)
        .and_then(|cfg| commands::run(name, &cfg, &opts));
    match code {
        Ok(c) => ExitCode::from(c as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e) as u8)
        }
    }
}
