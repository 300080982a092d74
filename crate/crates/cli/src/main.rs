//! `errwatch`: run, compare, sweep, validate and replay simulated sessions.
//!
//! Exit codes: 0 success, 2 invalid input, 1 anything else.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "errwatch", version, about = "Error-aware HRI engine and scenario simulator")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Global {
    /// Replaces the seed of the scenario and of every config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory, created if absent.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Write only this format (default: both).
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    /// Tracing filter, e.g. `info` or `errwatch_core=debug`.
    #[arg(long, global = true, default_value = "warn")]
    pub log_level: String,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Run one scenario under one engine config.
    Run {
        scenario: PathBuf,
        config: PathBuf,
        /// Answer robot queries from stdin instead of the scripted policy.
        #[arg(long)]
        interactive: bool,
        /// Classify speech with an external HTTP service (rules as fallback).
        #[arg(long)]
        intent_endpoint: Option<String>,
    },
    /// Run a scenario under two configs and report deltas.
    Compare {
        scenario: PathBuf,
        config_a: PathBuf,
        config_b: PathBuf,
        /// Seed range such as `0..19` (inclusive); runs in parallel.
        #[arg(long)]
        seeds: Option<String>,
    },
    /// Run a grid of detector parameters.
    Sweep {
        scenario: PathBuf,
        config: PathBuf,
        #[arg(long, value_delimiter = ',')]
        vote_fraction: Vec<f64>,
        #[arg(long, value_delimiter = ',')]
        boost_delta: Vec<f64>,
        #[arg(long, value_delimiter = ',')]
        decay_millis: Vec<u64>,
    },
    /// Check scenario or config files without running them.
    Validate {
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
    /// Re-run the engine over a recorded trace and recompute its metrics.
    Replay {
        trace: PathBuf,
        /// Defaults to the manifest.json written next to the trace.
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
}

fn init_logging(filter: &str) {
    let filter = tracing_subscriber::EnvFilter::try_new(filter).unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn"));
    tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr).with_target(false).init();
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(&cli.global.log_level);
    match commands::dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {:#}", e);
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
