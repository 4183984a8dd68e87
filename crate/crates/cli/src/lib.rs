//! Command-line front end: experiment configuration and the pipeline verbs.

pub mod commands;
pub mod config;

use std::fs;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use log::info;

use vpflow_core::{Error, Result};

use config::{ExperimentConfig, Preset};

#[derive(Debug, Parser)]
#[command(
    name = "vpflow",
    version,
    about = "Vertical power flow forecasting with daily model updates"
)]
pub struct Cli {
    /// Experiment configuration (TOML). Defaults apply to missing keys.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the experiment seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides the architecture preset.
    #[arg(long, global = true, value_enum)]
    pub preset: Option<Preset>,
    /// Overrides the output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Writes the synthetic transformer fleet.
    Generate,
    /// Trains one model per transformer.
    Train,
    /// Issues frozen-model and persistence forecasts over validation and test.
    Forecast,
    /// Issues forecasts with the configured daily update strategy.
    UpdateRun,
    /// Runs every update strategy of the grid and scores each.
    Grid,
    /// Scores all forecast archives on the test period.
    Evaluate,
    /// Compares two models from the evaluation report.
    Compare {
        #[arg(long, default_value = commands::LSTM)]
        frozen: String,
        #[arg(long, default_value = commands::LSTM_UPDATED)]
        updated: String,
    },
    /// Checks that no archived forecast used data from after its origin.
    VerifyArchive {
        /// Runs directory; defaults to `<out>/runs`.
        #[arg(long)]
        runs: Option<PathBuf>,
    },
}

/// Process exit status for an error: 1 for usage and configuration, 3 for
/// numerical failures, 2 for everything concerning data.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) => 1,
        Error::Numerical(_) => 3,
        _ => 2,
    }
}

/// Loads the configuration, applies command-line overrides and echoes the
/// result to `<out>/effective_config.toml`.
pub fn resolve_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(preset) = cli.preset {
        cfg.preset = preset;
    }
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }
    cfg.validate()?;
    fs::create_dir_all(&cfg.out).map_err(|e| Error::Io {
        path: cfg.out.clone(),
        source: e,
    })?;
    let echo = cfg.out.join("effective_config.toml");
    fs::write(&echo, cfg.to_toml()).map_err(|e| Error::Io { path: echo, source: e })?;
    Ok(cfg)
}

pub fn run(cli: &Cli) -> Result<()> {
    let cfg = resolve_config(cli)?;
    info!("output directory {}", cfg.out.display());
    match &cli.command {
        Command::Generate => commands::cmd_generate(&cfg).map(|_| ()),
        Command::Train => commands::cmd_train(&cfg),
        Command::Forecast => commands::cmd_forecast(&cfg),
        Command::UpdateRun => commands::cmd_update_run(&cfg),
        Command::Grid => commands::cmd_grid(&cfg),
        Command::Evaluate => commands::cmd_evaluate(&cfg).map(|_| ()),
        Command::Compare { frozen, updated } => commands::cmd_compare(&cfg, frozen, updated).map(|_| ()),
        Command::VerifyArchive { runs } => {
            let audit = commands::cmd_verify_archive(&cfg, runs.as_deref())?;
            if audit.violations.is_empty() {
                Ok(())
            } else {
                Err(Error::Data(format!("{} look-ahead violations", audit.violations.len())))
            }
        }
    }
}
