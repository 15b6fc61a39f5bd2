//! `bearing-rul`: synthesize or ingest runs, build features, estimate the
//! characteristic life, train, search, filter and report.

mod artifacts;
mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "bearing-rul", version, about = "Bearing remaining-useful-life experiments")]
struct Cli {
    /// Experiment manifest (TOML).
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    /// Master seed, overriding the manifest.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for training trials.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory, overriding the manifest.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate synthetic run-to-failure recordings.
    Synth,
    /// Read recorded runs from disk.
    Ingest,
    /// Build the scaled spectral feature cache and split the runs.
    Features,
    /// Estimate the characteristic life from failure records.
    Weibayes {
        /// Comma-separated run times; suffix `c` marks a censored run (e.g. `3,4c`).
        #[arg(long)]
        records: Option<String>,
        /// Weibull shape, overriding the manifest.
        #[arg(long)]
        beta: Option<f64>,
    },
    /// Train the single model described in the manifest's [train] section.
    Train,
    /// Run the random hyperparameter search.
    Search,
    /// Keep the search results that pass the thresholds.
    Filter,
    /// Write the analysis tables, summary and plot-ready series.
    Report,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
