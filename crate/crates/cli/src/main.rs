//! Command-line pipeline for latent-communication experiments.
//!
//! Exit codes: 0 success, 1 configuration or runtime error, 2 distribution
//! drift detected by the reconstruction monitor.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

mod commands;
mod config;
mod rundir;

use commands::Outcome;

#[derive(Parser)]
#[command(
    name = "agnocomm",
    version,
    about = "Multi-agent RL with task-agnostic latent communication",
    subcommand_required = true,
    arg_required_else_help = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Replace the configured seed list with this single seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides run.out_dir).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Collect a reward-free observation-set dataset.
    Collect(CommonArgs),
    /// Train the set autoencoder and calibrate the drift threshold.
    Pretrain(CommonArgs),
    /// Train policies with PPO under a latent arm, one run per seed.
    Train(CommonArgs),
    /// Evaluate a completed training run deterministically.
    Eval(CommonArgs),
    /// Run the reconstruction-loss drift monitor.
    Ood(CommonArgs),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        // Exit 2 is reserved for the drift verdict, so usage errors
        // report 1 like every other failure.
        Err(e) => {
            eprint!("{e}");
            return ExitCode::from(1);
        }
    };
    let (args, runner): (&CommonArgs, fn(&config::RunConfig) -> agnocomm_core::Result<Outcome>) =
        match &cli.command {
            Command::Collect(a) => (a, commands::collect::run),
            Command::Pretrain(a) => (a, commands::pretrain::run),
            Command::Train(a) => (a, commands::train::run),
            Command::Eval(a) => (a, commands::eval::run),
            Command::Ood(a) => (a, commands::ood::run),
        };
    let cfg = match config::load_config(&args.config, args.seed, args.out.clone()) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    match runner(&cfg) {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::OodDetected) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
