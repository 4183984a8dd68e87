//! Declarative experiment configuration (TOML).
//!
//! Every key has a default; an empty file is a valid configuration. The
//! resolved configuration is written next to the outputs as
//! `effective_config.toml` and can be fed back in unchanged.

use std::fs;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use vpflow_core::evaluation::CANONICAL_HORIZONS_H;
use vpflow_core::model::{ArchitectureSpec, TrainingConfig};
use vpflow_core::neuralnet::LossKind;
use vpflow_core::preprocess::{SplitSpec, DEFAULT_QUANTILE_LEVELS};
use vpflow_core::synthgrid::fleet_calendar;
use vpflow_core::update_engine::{OptimizerMode, UpdateStrategy, CANONICAL_EPOCHS, CANONICAL_LRS};
use vpflow_core::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// 100 LSTM units, 500/500 dense.
    Paper,
    /// 32 LSTM units, 128/128 dense.
    Desk,
    /// 8 LSTM units, 32/32 dense; for smoke tests.
    Tiny,
}

impl Preset {
    pub fn architecture(self) -> ArchitectureSpec {
        match self {
            Preset::Paper => ArchitectureSpec::paper(),
            Preset::Desk => ArchitectureSpec::desk(),
            Preset::Tiny => ArchitectureSpec {
                lstm_units: 8,
                dense1: 32,
                dense2: 32,
                ..ArchitectureSpec::paper()
            },
        }
    }
}

/// Optional per-field overrides of the preset architecture.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchitectureOverrides {
    pub lstm_units: Option<usize>,
    pub dense1: Option<usize>,
    pub dense2: Option<usize>,
    pub dropout: Option<f64>,
    pub recurrent_dropout: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Directory holding one sub-directory per transformer. Relative paths
    /// are resolved against the output directory.
    pub scenarios_dir: PathBuf,
    /// Transformers to process; empty means every directory found.
    pub transformers: Vec<String>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            scenarios_dir: PathBuf::from("scenarios"),
            transformers: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub train_end: DateTime<Utc>,
    pub val_end: DateTime<Utc>,
    /// Forecasts are issued on days before this date.
    pub test_end: DateTime<Utc>,
}

impl Default for SplitConfig {
    fn default() -> Self {
        let cal = fleet_calendar();
        Self {
            train_end: cal.train_end,
            val_end: cal.val_end,
            test_end: cal.test_end,
        }
    }
}

impl SplitConfig {
    pub fn spec(&self) -> SplitSpec {
        SplitSpec {
            train_end: self.train_end,
            val_end: self.val_end,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UpdateConfig {
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub lr: f64,
    pub loss: LossKind,
    pub optimizer: OptimizerMode,
}

impl Default for UpdateConfig {
    fn default() -> Self {
        Self {
            epochs: 5,
            steps_per_epoch: 1,
            lr: 0.001,
            loss: LossKind::Mse,
            optimizer: OptimizerMode::Reset,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub epochs: Vec<usize>,
    pub lrs: Vec<f64>,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            epochs: CANONICAL_EPOCHS.to_vec(),
            lrs: CANONICAL_LRS.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    pub horizons_h: Vec<usize>,
    pub origin_stride_minutes: i64,
    pub quantile_levels: (f64, f64),
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            horizons_h: CANONICAL_HORIZONS_H.to_vec(),
            origin_stride_minutes: 240,
            quantile_levels: DEFAULT_QUANTILE_LEVELS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub preset: Preset,
    pub out: PathBuf,
    pub architecture: ArchitectureOverrides,
    pub data: DataConfig,
    pub split: SplitConfig,
    pub training: TrainingConfig,
    pub update: UpdateConfig,
    pub grid: GridConfig,
    pub evaluation: EvaluationConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            preset: Preset::Desk,
            out: PathBuf::from("out"),
            architecture: ArchitectureOverrides::default(),
            data: DataConfig::default(),
            split: SplitConfig::default(),
            training: TrainingConfig::default(),
            update: UpdateConfig::default(),
            grid: GridConfig::default(),
            evaluation: EvaluationConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    pub fn architecture(&self) -> ArchitectureSpec {
        let mut a = self.preset.architecture();
        let o = &self.architecture;
        a.lstm_units = o.lstm_units.unwrap_or(a.lstm_units);
        a.dense1 = o.dense1.unwrap_or(a.dense1);
        a.dense2 = o.dense2.unwrap_or(a.dense2);
        a.dropout = o.dropout.unwrap_or(a.dropout);
        a.recurrent_dropout = o.recurrent_dropout.unwrap_or(a.recurrent_dropout);
        a
    }

    pub fn update_strategy(&self) -> UpdateStrategy {
        let u = &self.update;
        UpdateStrategy {
            epochs: u.epochs,
            steps_per_epoch: u.steps_per_epoch,
            lr: u.lr,
            loss: u.loss,
            optimizer: u.optimizer,
            seed: self.seed,
        }
    }

    pub fn grid_strategies(&self) -> Vec<UpdateStrategy> {
        let base = self.update_strategy();
        self.grid
            .epochs
            .iter()
            .flat_map(|&epochs| {
                self.grid
                    .lrs
                    .iter()
                    .map(move |&lr| UpdateStrategy { epochs, lr, ..base })
            })
            .collect()
    }

    pub fn scenarios_dir(&self) -> PathBuf {
        if self.data.scenarios_dir.is_absolute() {
            self.data.scenarios_dir.clone()
        } else {
            self.out.join(&self.data.scenarios_dir)
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.architecture().validate()?;
        self.training.validate()?;
        self.update_strategy().validate()?;
        let s = &self.split;
        if !(s.train_end < s.val_end && s.val_end < s.test_end) {
            return Err(Error::Config(
                "split dates must satisfy train_end < val_end < test_end".into(),
            ));
        }
        for t in [s.train_end, s.val_end, s.test_end] {
            if t.timestamp() % 86_400 != 0 {
                return Err(Error::Config(format!("split date {t} must be a midnight")));
            }
        }
        let e = &self.evaluation;
        if e.horizons_h.is_empty() || e.horizons_h.contains(&0) {
            return Err(Error::Config("horizons must be positive hours".into()));
        }
        if e.origin_stride_minutes <= 0 || e.origin_stride_minutes % 15 != 0 || 1440 % e.origin_stride_minutes != 0 {
            return Err(Error::Config(
                "origin stride must divide a day in 15-minute steps".into(),
            ));
        }
        if self.grid.epochs.is_empty() || self.grid.lrs.is_empty() {
            return Err(Error::Config(
                "grid needs at least one epoch count and learning rate".into(),
            ));
        }
        Ok(())
    }
}
