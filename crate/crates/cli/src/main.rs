//! `afd` — active fault detection simulator for inverter-based grids.
//!
//! Exit codes: 0 success, 1 numeric/runtime failure, 2 usage or
//! configuration error.

mod bench;
mod config;
mod csvout;
mod presets;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use config::{Overrides, RunConfig};

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, unknown preset, malformed configuration. Exit 2.
    Usage(String),
    /// Numeric or I/O failure during a run. Exit 1.
    Runtime(String),
}

impl From<afd_core::Error> for CliError {
    fn from(e: afd_core::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Runtime(m) => write!(f, "runtime error: {m}"),
        }
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "afd",
    version,
    about = "Active fault detection for inverter-based grids: preset experiments over the multiple-model Kalman filter and optimal perturbation design"
)]
struct Cli {
    /// JSON configuration file (all fields optional; flags override it)
    #[arg(long)]
    config: Option<PathBuf>,

    /// Preset to run: example1 | tradeoff | voltage-indicator |
    /// harmonic-compare | robustness | horizon-timing
    #[arg(long)]
    preset: String,

    /// Perturbation bound γ (overrides the config)
    #[arg(long)]
    gamma: Option<f64>,

    /// Detection horizon N (overrides the config)
    #[arg(long)]
    horizon: Option<usize>,

    /// Scenario seed (overrides the config)
    #[arg(long)]
    seed: Option<u64>,

    /// Output directory (overrides the config)
    #[arg(long)]
    out: Option<PathBuf>,

    /// Monte Carlo repetitions (overrides the config)
    #[arg(long)]
    runs: Option<usize>,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
            RunConfig::from_json(&text)?
        }
        None => RunConfig::default(),
    };
    let overrides = Overrides {
        gamma: cli.gamma,
        horizon: cli.horizon,
        seed: cli.seed,
        runs: cli.runs,
        out: cli.out.map(|p| p.display().to_string()),
    };
    cfg.apply_overrides(&overrides);
    presets::run_preset(&cli.preset, &cfg, &overrides)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ CliError::Usage(_)) => {
            eprintln!("{e}");
            ExitCode::from(2)
        }
        Err(e @ CliError::Runtime(_)) => {
            eprintln!("{e}");
            ExitCode::from(1)
        }
    }
}
