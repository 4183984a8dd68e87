//! The two-branch LSTM forecaster: architecture, initial training with early
//! stopping, inference and checkpoints.

mod checkpoint;
mod network;
mod train;

use chrono::{DateTime, Duration, Utc};
use ndarray::{Array3, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forecast::{ForecastRecord, ForecastSet};
use crate::grid_data::{FeatureFrame, PowerSeries, FEATURE_COUNT};
use crate::neuralnet::activations::LEAKY_RELU_SLOPE;
use crate::neuralnet::{LossKind, ParamSet};
use crate::preprocess::{InputScalers, NormalizedSeries, HORIZON, LOOKBACK};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, ScalerSidecar, CHECKPOINT_VERSION};
pub use network::{backward, forward, Batch, DropoutMasks, ForwardCache, NetworkParams};
pub use train::{
    masked_loss_over, train_initial, train_step, BatchCycler, EarlyStopping, EpochRecord, EpochVerdict, TrainOutcome,
    WindowSet,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureSpec {
    pub lstm_units: usize,
    pub dense1: usize,
    pub dense2: usize,
    pub output_dim: usize,
    pub dropout: f64,
    pub recurrent_dropout: f64,
    pub feat_dim: usize,
    pub lookback: usize,
    pub leaky_slope: f64,
}

impl ArchitectureSpec {
    /// Full-size network: 100 LSTM units per branch, two 500-unit dense layers.
    pub fn paper() -> Self {
        Self {
            lstm_units: 100,
            dense1: 500,
            dense2: 500,
            output_dim: HORIZON,
            dropout: 0.5,
            recurrent_dropout: 0.5,
            feat_dim: FEATURE_COUNT,
            lookback: LOOKBACK,
            leaky_slope: LEAKY_RELU_SLOPE,
        }
    }

    /// Laptop-scale network for CI and desk experiments.
    pub fn desk() -> Self {
        Self {
            lstm_units: 32,
            dense1: 128,
            dense2: 128,
            ..Self::paper()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let sizes = [
            self.lstm_units,
            self.dense1,
            self.dense2,
            self.output_dim,
            self.feat_dim,
            self.lookback,
        ];
        if sizes.contains(&0) {
            return Err(Error::Config(format!("architecture sizes must be positive: {self:?}")));
        }
        for r in [self.dropout, self.recurrent_dropout] {
            if !(0.0..1.0).contains(&r) {
                return Err(Error::Config(format!("dropout rate {r} outside [0, 1)")));
            }
        }
        if !(self.leaky_slope >= 0.0 && self.leaky_slope < 1.0) {
            return Err(Error::Config("leaky slope must be in [0, 1)".into()));
        }
        Ok(())
    }

    /// Parameter count from the layer shape formulas.
    pub fn parameter_count(&self) -> usize {
        let lstm = |d: usize| 4 * self.lstm_units * (d + self.lstm_units) + 4 * self.lstm_units;
        let dense = |i: usize, o: usize| o * i + o;
        lstm(1)
            + lstm(self.feat_dim)
            + dense(2 * self.lstm_units, self.dense1)
            + dense(self.dense1, self.dense2)
            + dense(self.dense2, self.output_dim)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub loss: LossKind,
    pub early_stopping_patience: usize,
    pub seed: u64,
    /// Stride between validation windows (1 = every window).
    pub val_stride: usize,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            epochs: 40,
            steps_per_epoch: 50,
            batch_size: 192,
            lr: 0.001,
            loss: LossKind::Mae,
            early_stopping_patience: 5,
            seed: 0,
            val_stride: 1,
            clip_norm: None,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.steps_per_epoch == 0 || self.batch_size == 0 || self.val_stride == 0 {
            return Err(Error::Config(format!("training sizes must be positive: {self:?}")));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        Ok(())
    }
}

/// A forecaster for one transformer: architecture, weights and the input
/// normalization fitted on its training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub arch: ArchitectureSpec,
    pub net: NetworkParams,
    pub scalers: InputScalers,
}

/// Fresh network initialized deterministically from `seed`.
pub fn build_model(arch: ArchitectureSpec, scalers: InputScalers, seed: u64) -> Result<ModelParams> {
    arch.validate()?;
    if scalers.power.dim() != 1 || scalers.features.dim() != arch.feat_dim {
        return Err(Error::Config(format!(
            "scalers cover {} power / {} feature columns, architecture expects 1 / {}",
            scalers.power.dim(),
            scalers.features.dim(),
            arch.feat_dim
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(ModelParams {
        arch,
        net: NetworkParams::init(&arch, &mut rng),
        scalers,
    })
}

/// Result of forecasting at a list of origins.
#[derive(Debug, Clone, PartialEq)]
pub struct RollingForecast {
    pub forecasts: ForecastSet,
    /// Origins dropped because the lookback window was not available.
    pub skipped: usize,
}

/// Origins from `first` (inclusive) to `last` (inclusive) every `stride`.
pub fn origins_every(first: DateTime<Utc>, last: DateTime<Utc>, stride: Duration) -> Vec<DateTime<Utc>> {
    let mut out = Vec::new();
    let mut t = first;
    while t <= last {
        out.push(t);
        t += stride;
    }
    out
}

impl ModelParams {
    pub fn num_params(&self) -> usize {
        self.net.num_params()
    }

    /// Inference on normalized data; returns normalized forecasts (B x H).
    pub fn forward_normalized(&self, series: &NormalizedSeries, origins: &[usize]) -> Result<ndarray::Array2<f64>> {
        let batch = Batch::gather(series, origins, self.arch.lookback, self.arch.output_dim);
        let (out, _) = forward(
            &self.net,
            &self.arch,
            batch.x_power.view(),
            batch.x_feat.view(),
            None,
            false,
        )?;
        Ok(out)
    }

    /// Forecast in MW from raw (physical-unit) lookback windows: `power` has
    /// `lookback` values, `features` is `lookback x feat_dim`.
    pub fn predict(&self, power: &[f64], features: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        let lookback = self.arch.lookback;
        if power.len() != lookback || features.dim() != (lookback, self.arch.feat_dim) {
            return Err(Error::Dimension(format!(
                "predict needs {lookback} power values and {lookback}x{} features, got {} and {:?}",
                self.arch.feat_dim,
                power.len(),
                features.dim()
            )));
        }
        let mut x_power = Array3::zeros((lookback, 1, 1));
        let mut x_feat = Array3::zeros((lookback, 1, self.arch.feat_dim));
        for t in 0..lookback {
            x_power[[t, 0, 0]] = self.scalers.power.apply(power[t], 0);
            for j in 0..self.arch.feat_dim {
                x_feat[[t, 0, j]] = self.scalers.features.apply(features[[t, j]], j);
            }
        }
        let (out, _) = forward(&self.net, &self.arch, x_power.view(), x_feat.view(), None, false)?;
        let values: Vec<f64> = out.row(0).iter().map(|&z| self.scalers.power.invert(z, 0)).collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite forecast".into()));
        }
        Ok(values)
    }

    /// Forecasts at each origin (timestamp of the latest measurement used).
    pub fn rolling_forecast(
        &self,
        power: &PowerSeries,
        features: &FeatureFrame,
        origins: &[DateTime<Utc>],
    ) -> Result<RollingForecast> {
        let series = self.scalers.normalize(power, features)?;
        self.rolling_forecast_normalized(&series, origins)
    }

    pub fn rolling_forecast_normalized(
        &self,
        series: &NormalizedSeries,
        origins: &[DateTime<Utc>],
    ) -> Result<RollingForecast> {
        let lookback = self.arch.lookback;
        let mut usable = Vec::new();
        let mut skipped = 0;
        for &t in origins {
            match crate::grid_data::axis_offset(series.start, t) {
                Some(i) if i >= lookback as i64 - 1 && (i as usize) < series.len() => usable.push((t, i as usize)),
                _ => skipped += 1,
            }
        }
        if skipped > 0 {
            log::warn!("skipped {skipped} forecast origins without a full lookback window");
        }
        let mut records = Vec::with_capacity(usable.len());
        for chunk in usable.chunks(128) {
            let idx: Vec<usize> = chunk.iter().map(|&(_, i)| i).collect();
            let out = self.forward_normalized(series, &idx)?;
            for (row, &(t, _)) in out.rows().into_iter().zip(chunk) {
                let values: Vec<f64> = row.iter().map(|&z| self.scalers.power.invert(z, 0)).collect();
                if values.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Numerical(format!("non-finite forecast at origin {t}")));
                }
                records.push(ForecastRecord { origin: t, values });
            }
        }
        Ok(RollingForecast {
            forecasts: ForecastSet { records },
            skipped,
        })
    }
}
