//! Command-line entry point. Exit codes: 0 success, 1 configuration
//! error, 2 runtime failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fedgru_core::config::load_config;
use fedgru_core::experiment::{run_batch_sweep, run_experiment};
use fedgru_core::Error;

#[derive(Parser)]
#[command(name = "fedgru", version, about = "Federated GRU delay anomaly simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment from a config file.
    Run(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Override the attacked-fraction sweep, e.g. `0.1,0.3,0.5`.
    #[arg(long, value_delimiter = ',')]
    sweep_fractions: Option<Vec<f64>>,
    /// Run the batch-size sweep instead of the attack sweep.
    #[arg(long)]
    batch_sweep: bool,
    /// Override the output directory (env: FEDGRU_OUT).
    #[arg(long, env = "FEDGRU_OUT")]
    out: Option<PathBuf>,
    /// Override the master seed (env: FEDGRU_SEED).
    #[arg(long, env = "FEDGRU_SEED")]
    seed: Option<u64>,
}

fn run(args: &RunArgs) -> fedgru_core::Result<()> {
    let mut cfg = load_config(&args.config)?;
    if let Some(fractions) = &args.sweep_fractions {
        cfg.attack.sweep_fractions = fractions.clone();
    }
    if let Some(out) = &args.out {
        cfg.out_dir = out.clone();
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    if args.batch_sweep {
        run_batch_sweep(&cfg)?;
        log::info!("batch sweep written to {}", cfg.out_dir.display());
    } else {
        let outcome = run_experiment(&cfg)?;
        log::info!(
            "{} sweep point(s) written to {}",
            outcome.runs.len(),
            cfg.out_dir.display()
        );
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let Command::Run(args) = &cli.command;
    match run(args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ Error::Config(_)) => {
            eprintln!("configuration error: {}", e);
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {}", e);
            ExitCode::from(2)
        }
    }
}
