use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use cps_lab::{configure_threads, run_file, validate_file, CliError, RunOptions, RunVerdict};

#[derive(Debug, Parser)]
#[command(name = "cps-lab", version, about = "Consistent price system experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run an experiment and write report.json, summary.csv, manifest.json and plots/.
    Run {
        config: PathBuf,
        /// Output directory; overrides the config and $CPS_LAB_OUT.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the config's base seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads (default: all cores).
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        threads: Option<u64>,
        #[arg(long)]
        no_plots: bool,
    },
    /// Check a config without simulating anything.
    Validate { config: PathBuf },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn execute(command: Command) -> Result<ExitCode, CliError> {
    match command {
        Command::Validate { config } => {
            let plan = validate_file(&config)?;
            println!("{}: valid `{}` config", config.display(), plan.experiment);
            Ok(ExitCode::SUCCESS)
        }
        Command::Run { config, out, seed, threads, no_plots } => {
            let threads = threads.map(|t| t as usize);
            configure_threads(threads)?;
            let opts = RunOptions { out, seed, threads, no_plots };
            let summary = run_file(&config, &opts)?;
            println!("{} -> {}", summary.verdict.as_str(), summary.output_dir.display());
            if let cps_lab::runner::Results::Condition(c) = &summary.outcome.report.results {
                for line in &c.failing {
                    println!("  failing: {line}");
                }
            }
            Ok(match summary.verdict {
                RunVerdict::Fail => ExitCode::from(2),
                RunVerdict::Pass | RunVerdict::Completed => ExitCode::SUCCESS,
            })
        }
    }
}
