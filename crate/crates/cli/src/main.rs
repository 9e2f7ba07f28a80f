//! Command-line front end for flow-field reconstruction experiments.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

// the training loops allocate sizeable scratch matrices every step; the
// default allocator returns them to the kernel each time, which shows up as
// significant sys time on the hot path
#[global_allocator]
static ALLOC: mimalloc::MiMalloc = mimalloc::MiMalloc;

use commands::{CliError, Ctx};
use config::ExperimentConfig;

#[derive(Parser)]
#[command(
    name = "pulsefield",
    about = "Physics-informed neural-field reconstruction of pulsatile flow fields",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Path to the JSON experiment configuration.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Resample fields onto the reference grid when grids differ.
    #[arg(long)]
    resample: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the clean and corrupted synthetic datasets.
    Generate(Common),
    /// Train a model on a noisy dataset and report metrics.
    Train(Common),
    /// Sample a checkpoint onto a grid and write a flowfield file.
    Reconstruct(Common),
    /// Compute metrics for a prediction against a reference.
    Evaluate(Common),
    /// Sweep the physics loss weight and tabulate relative decreases.
    Ablate(Common),
}

fn build_ctx(common: &Common) -> Result<Ctx, CliError> {
    let cfg = ExperimentConfig::load(&common.config).map_err(CliError::Config)?;
    let cfg = cfg
        .resolve(common.seed, common.out.clone())
        .map_err(CliError::Config)?;
    let out = cfg.out_dir();
    Ok(Ctx {
        cfg,
        out,
        resample: common.resample,
    })
}

fn dispatch(cli: &Cli) -> Result<(), CliError> {
    let (common, run): (&Common, fn(&Ctx) -> Result<(), CliError>) = match &cli.command {
        Command::Generate(c) => (c, commands::generate::run),
        Command::Train(c) => (c, commands::train::run),
        Command::Reconstruct(c) => (c, commands::reconstruct::run),
        Command::Evaluate(c) => (c, commands::evaluate::run),
        Command::Ablate(c) => (c, commands::ablate::run),
    };
    let ctx = build_ctx(common)?;
    run(&ctx)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
