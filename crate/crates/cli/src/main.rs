//! `ssyk`: disorder-averaged experiments on sparse cSYK batteries.
//!
//! ```text
//! ssyk <gap-ratio|sff|charge|efficiency> [--config PATH] [--seed U64]
//!      [--workers N] [--out DIR] [--resume]
//! ```
//!
//! Exit status: 0 on success, 2 for invalid input, 3 when a gap-ratio scan
//! finds no crossing, 1 for anything else.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::{load_config, CliError, Command, Context};
use config::Config;
use output::{Sidecar, SIDECAR, TOOL};

#[derive(Parser)]
#[command(name = "ssyk", version, about = "Sparse cSYK quantum battery experiments")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Disorder-averaged gap ratio r(p) and the critical sparsity p₂.
    GapRatio(RunArgs),
    /// Spectral form factor for one or more sparsities.
    Sff(RunArgs),
    /// Stored energy after a charging pulse, plus level populations.
    Charge(RunArgs),
    /// Half-battery efficiency at the optimal charging time.
    Efficiency(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// `key = value` file, or a `run.json` sidecar from an earlier run.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed; overrides `seed` from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads. Results do not depend on this.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    workers: u64,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Continue from checkpoints in the output directory.
    #[arg(long)]
    resume: bool,
}

fn execute(command: Command, args: RunArgs) -> Result<bool, CliError> {
    let mut config = match &args.config {
        Some(path) => load_config(path, command)?,
        None => Config::default(),
    };
    if let Some(seed) = args.seed {
        config.set("seed", seed);
    }
    let plan = command.plan(&mut config)?;
    let ctx = Context {
        out: args.out,
        workers: args.workers as usize,
        resume: args.resume,
    };
    let outcome = plan.execute(&ctx)?;
    let sidecar = Sidecar {
        tool: TOOL.into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: plan.command().name().into(),
        master_seed: plan.master_seed,
        workers: ctx.workers,
        config: config.entries().clone(),
        outputs: outcome.outputs,
        results: outcome.results,
    };
    sidecar.write(&ctx.out)?;
    eprintln!("wrote {}", ctx.out.join(SIDECAR).display());
    Ok(!outcome.no_crossing)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, args) = match cli.command {
        Sub::GapRatio(a) => (Command::GapRatio, a),
        Sub::Sff(a) => (Command::Sff, a),
        Sub::Charge(a) => (Command::Charge, a),
        Sub::Efficiency(a) => (Command::Efficiency, a),
    };
    match execute(command, args) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("p2 not found: r(p) stays above 0.99 r(1) on the whole grid");
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
