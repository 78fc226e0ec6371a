use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use flowsteer_cli::config::{CliOverrides, ExperimentTag};
use flowsteer_cli::runner;

/// Desk-scale rectified-flow steering lab: trains toy flow models and runs
/// seeded, reproducible guidance experiments from plain-text configs.
#[derive(Parser)]
#[command(name = "flowsteer", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Experiment configuration file (key = value lines).
    #[arg(long)]
    config: PathBuf,
    /// Override the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Fan out over this many independent seeded trials.
    #[arg(long)]
    trials: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment named by the config's `experiment` key.
    Run(CommonArgs),
    /// Run a multi-method comparison table (compare.* keys).
    Compare(CommonArgs),
    /// Generate an on-disk dataset (dataset.* keys).
    Dataset(CommonArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (args, forced) = match &cli.command {
        Command::Run(a) => (a, None),
        Command::Compare(a) => (a, Some(ExperimentTag::Compare)),
        Command::Dataset(a) => (a, Some(ExperimentTag::Dataset)),
    };
    let overrides = CliOverrides {
        seed: args.seed,
        out: args.out.as_ref().map(|p| p.display().to_string()),
        trials: args.trials,
    };
    match runner::run_file(&args.config, &overrides, forced) {
        Ok(outcomes) => {
            for o in &outcomes {
                println!(
                    "{}: seed {} -> {} ({} metrics, {:.0} ms)",
                    o.summary.experiment,
                    o.summary.seed,
                    o.out_dir.display(),
                    o.summary.metrics.len(),
                    o.summary.wall_ms
                );
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
