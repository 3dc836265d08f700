//! `eplearn`: simulate data, fit and apply contrast models, run benchmarks.
//!
//! Every command reads a flat `key = value` configuration. Keys come from
//! `--config FILE`, then `--set key=value`, then the dedicated flags, with
//! later sources winning. Errors are a single line on stderr; exit code 1
//! means invalid input, 2 a runtime failure.

mod commands;
mod config;
mod error;
mod learners;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Parser, Subcommand};
use eplearner::parallel::with_workers;

use config::RunConfig;
use error::{CliError, EXIT_VALIDATION};

#[derive(Parser, Debug)]
#[command(name = "eplearn", version, about = "Efficient plug-in learners for CATE and log relative risk")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Configuration file with `key = value` lines.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Override a configuration key; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,

    #[arg(long, global = true)]
    seed: Option<u64>,

    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,

    /// Worker threads for `benchmark`.
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// More logging (-v info, -vv debug).
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Draw a dataset from a simulation scenario.
    Simulate,
    /// Fit a contrast model and save it as JSON.
    Fit,
    /// Predict the contrast at query covariates.
    Predict,
    /// Run a seeded Monte Carlo benchmark and write a CSV table.
    Benchmark,
    /// Score equation residuals and pseudo-outcome checks for a dataset.
    Diagnose,
}

fn build_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    for pair in &cli.set {
        cfg.set_pair(pair)?;
    }
    if let Some(seed) = cli.seed {
        cfg.set("seed", seed.to_string());
    }
    if let Some(out) = &cli.out {
        cfg.set("out", out.display().to_string());
    }
    if let Some(w) = cli.workers {
        cfg.set("workers", w.to_string());
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let cfg = build_config(cli)?;
    match cli.command {
        // the benchmark manages its own pool
        Command::Benchmark => commands::benchmark(&cfg),
        Command::Simulate => with_workers(1, |_| commands::simulate(&cfg)),
        Command::Fit => with_workers(1, |_| commands::fit(&cfg)),
        Command::Predict => with_workers(1, |_| commands::predict(&cfg)),
        Command::Diagnose => with_workers(1, |_| commands::diagnose(&cfg)),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.kind().to_string();
            let detail = e.to_string();
            let first = detail.lines().next().unwrap_or(&msg).trim_start_matches("error: ");
            eprintln!("{}", CliError::validation(None, first.to_string()));
            return ExitCode::from(EXIT_VALIDATION as u8);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).format_timestamp(None).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
