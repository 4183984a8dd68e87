//! Daily regular retraining and the day-by-day forecast/update simulation.
//!
//! Each simulated day forecasts at its origins with the current model and
//! then, at midnight, retrains on the newest fully observed windows. A
//! forecast issued on day `d` therefore only ever sees updates that used data
//! up to the end of day `d - 1`.

use std::fs;
use std::path::Path;
use std::time::Instant;

use chrono::{DateTime, Duration, Utc};
use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::{horizon_pairs, horizon_step, nrmse_pairs, pearson_pairs};
use crate::forecast::{ArchiveRow, ForecastSet};
use crate::grid_data::{axis_offset, format_timestamp, parse_timestamp, step, PowerSeries, STEPS_PER_DAY};
use crate::model::{masked_loss_over, train_step, Batch, ModelParams, WindowSet};
use crate::neuralnet::{AdamState, LossKind};
use crate::preprocess::{NormalizedSeries, QuantileScaler};

/// Whether Adam moments survive from one daily update to the next.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerMode {
    #[default]
    Reset,
    Carry,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpdateStrategy {
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub lr: f64,
    pub loss: LossKind,
    #[serde(default)]
    pub optimizer: OptimizerMode,
    /// Seeds the dropout masks of every update step.
    #[serde(default)]
    pub seed: u64,
}

pub const CANONICAL_EPOCHS: [usize; 4] = [5, 10, 15, 20];
pub const CANONICAL_LRS: [f64; 2] = [0.01, 0.001];

impl UpdateStrategy {
    pub fn new(epochs: usize, lr: f64) -> Self {
        Self {
            epochs,
            steps_per_epoch: 1,
            lr,
            loss: LossKind::Mse,
            optimizer: OptimizerMode::Reset,
            seed: 0,
        }
    }

    /// The eight epoch/learning-rate combinations of the strategy grid.
    pub fn canonical_grid() -> Vec<Self> {
        CANONICAL_EPOCHS
            .iter()
            .flat_map(|&e| CANONICAL_LRS.iter().map(move |&lr| Self::new(e, lr)))
            .collect()
    }

    pub fn is_canonical(&self) -> bool {
        CANONICAL_EPOCHS.contains(&self.epochs)
            && CANONICAL_LRS.contains(&self.lr)
            && self.steps_per_epoch == 1
            && self.loss == LossKind::Mse
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps_per_epoch == 0 {
            return Err(Error::Config("update steps_per_epoch must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!(
                "update learning rate must be positive, got {}",
                self.lr
            )));
        }
        if !self.is_canonical() && self.epochs > 0 {
            warn!("non-canonical update strategy {self:?}");
        }
        Ok(())
    }
}

/// Optimizer state carried between updates in [`OptimizerMode::Carry`].
#[derive(Debug, Clone, Default)]
pub struct UpdateState {
    adam: Option<AdamState>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DailyUpdate {
    pub skipped: bool,
    pub windows: usize,
    /// Inference-mode loss on the update windows before and after training.
    pub pre_loss: Option<f64>,
    pub post_loss: Option<f64>,
}

/// Origins of the newest `STEPS_PER_DAY` windows whose every target lies
/// before `data_end` (exclusive).
pub fn update_origins(data_end: usize, lookback: usize, horizon: usize) -> Vec<usize> {
    let Some(last) = data_end.checked_sub(horizon + 1) else {
        return Vec::new();
    };
    if last + 1 < lookback {
        return Vec::new();
    }
    let first = (last + 1).saturating_sub(STEPS_PER_DAY).max(lookback - 1);
    (first..=last).collect()
}

fn update_seed(strategy_seed: u64, day: u64) -> u64 {
    strategy_seed ^ day.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Retrains `model` on `observed`, the series up to the update time. The
/// training windows are the newest day of origins with complete targets;
/// each epoch is `steps_per_epoch` Adam steps on all of them.
pub fn daily_update(
    model: &mut ModelParams,
    observed: &NormalizedSeries,
    strategy: &UpdateStrategy,
    state: &mut UpdateState,
    day: u64,
) -> Result<DailyUpdate> {
    strategy.validate()?;
    let origins = update_origins(observed.len(), model.arch.lookback, model.arch.output_dim);
    let skip = |windows| DailyUpdate {
        skipped: true,
        windows,
        pre_loss: None,
        post_loss: None,
    };
    let last_day = &observed.status[observed.len().saturating_sub(STEPS_PER_DAY)..];
    if last_day.iter().all(|s| !s.is_reliable()) {
        warn!("day {day}: no reliable measurements, update skipped");
        return Ok(skip(origins.len()));
    }
    if origins.is_empty() {
        warn!("day {day}: not enough history for an update window");
        return Ok(skip(0));
    }
    let windows = WindowSet::new(observed, &origins);
    let Some(pre_loss) = masked_loss_over(model, &windows, strategy.loss)? else {
        warn!("day {day}: every update target is unreliable, update skipped");
        return Ok(skip(origins.len()));
    };
    if strategy.epochs == 0 {
        return Ok(DailyUpdate {
            skipped: false,
            windows: origins.len(),
            pre_loss: Some(pre_loss),
            post_loss: Some(pre_loss),
        });
    }

    let batch = Batch::gather(observed, &origins, model.arch.lookback, model.arch.output_dim);
    let mut adam = match (strategy.optimizer, state.adam.take()) {
        (OptimizerMode::Carry, Some(mut a)) => {
            a.lr = strategy.lr;
            a
        }
        _ => AdamState::new(&model.net, strategy.lr),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(update_seed(strategy.seed, day));
    for _ in 0..strategy.epochs * strategy.steps_per_epoch {
        train_step(model, &mut adam, &batch, strategy.loss, None, &mut rng)?;
    }
    if strategy.optimizer == OptimizerMode::Carry {
        state.adam = Some(adam);
    }
    let post_loss = masked_loss_over(model, &windows, strategy.loss)?;
    Ok(DailyUpdate {
        skipped: false,
        windows: origins.len(),
        pre_loss: Some(pre_loss),
        post_loss,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    /// Midnight of the first simulated day.
    pub start: DateTime<Utc>,
    pub days: usize,
    /// Spacing of forecast origins within a day, starting at midnight.
    pub origin_stride_minutes: i64,
}

impl SimulationConfig {
    pub fn origins_of_day(&self, day: usize) -> Vec<DateTime<Utc>> {
        let begin = self.start + Duration::days(day as i64);
        let end = begin + Duration::days(1);
        let stride = Duration::minutes(self.origin_stride_minutes);
        let mut out = Vec::new();
        let mut t = begin;
        while t < end {
            out.push(t);
            t += stride;
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateRunRecord {
    pub day: usize,
    /// When the update is applied (midnight after the day).
    pub update_time: DateTime<Utc>,
    /// Timestamp of the newest measurement the update could use.
    pub data_end: DateTime<Utc>,
    pub forecasts_issued: usize,
    /// Model version the day's forecasts were issued with.
    pub model_version: usize,
    pub applied: bool,
    pub pre_loss: Option<f64>,
    pub post_loss: Option<f64>,
    pub wall_ms: u64,
}

/// Provenance of one archived forecast.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastIndexEntry {
    pub origin: DateTime<Utc>,
    pub model_version: usize,
    pub input_start: DateTime<Utc>,
    pub input_end: DateTime<Utc>,
    /// Newest measurement any training of this model version used.
    pub model_data_end: DateTime<Utc>,
}

#[derive(Debug, Clone)]
pub struct SimulationResult {
    pub records: Vec<UpdateRunRecord>,
    pub forecasts: ForecastSet,
    pub index: Vec<ForecastIndexEntry>,
    pub model: ModelParams,
}

/// Forecast-then-update loop over `config.days` days. `trained_until` is the
/// newest measurement the incoming model was trained on. With `strategy`
/// `None` no updates are made.
pub fn run_update_simulation(
    model: &ModelParams,
    series: &NormalizedSeries,
    trained_until: DateTime<Utc>,
    config: &SimulationConfig,
    strategy: Option<&UpdateStrategy>,
) -> Result<SimulationResult> {
    if config.days < 2 {
        return Err(Error::Range(format!(
            "simulation needs at least 2 days, got {}",
            config.days
        )));
    }
    if config.origin_stride_minutes <= 0 || config.origin_stride_minutes % 15 != 0 {
        return Err(Error::Config(
            "origin stride must be a positive multiple of 15 minutes".into(),
        ));
    }
    let first = match axis_offset(series.start, config.start) {
        Some(i) if i >= 0 => i as usize,
        _ => {
            return Err(Error::Range(format!(
                "simulation start {} is not on the series axis",
                config.start
            )))
        }
    };
    if first + config.days * STEPS_PER_DAY > series.len() {
        return Err(Error::Range(format!(
            "{} simulated days from {} run past the end of the series",
            config.days, config.start
        )));
    }
    if trained_until >= config.start {
        return Err(Error::State(format!(
            "model was trained on data up to {trained_until}, after the simulation start {}",
            config.start
        )));
    }
    if let Some(s) = strategy {
        s.validate()?;
    }

    let mut model = model.clone();
    let mut state = UpdateState::default();
    let mut version = 0usize;
    let mut model_data_end = trained_until;
    let mut records = Vec::with_capacity(config.days);
    let mut forecasts = ForecastSet::default();
    let mut index = Vec::new();
    let lookback = model.arch.lookback as i32;

    for day in 0..config.days {
        let clock = Instant::now();
        let data_end = first + (day + 1) * STEPS_PER_DAY;
        let observed = series.prefix(data_end);

        let origins = config.origins_of_day(day);
        let issued = model.rolling_forecast_normalized(&observed, &origins)?;
        for rec in &issued.forecasts.records {
            index.push(ForecastIndexEntry {
                origin: rec.origin,
                model_version: version,
                input_start: rec.origin - step() * (lookback - 1),
                input_end: rec.origin,
                model_data_end,
            });
        }
        let n_issued = issued.forecasts.len();
        let issued_with = version;
        forecasts.records.extend(issued.forecasts.records);

        let update_time = observed.timestamp(data_end);
        let data_end_time = observed.timestamp(data_end - 1);
        let (applied, pre_loss, post_loss) = match strategy {
            Some(s) => {
                let u = daily_update(&mut model, &observed, s, &mut state, day as u64)?;
                if !u.skipped {
                    version += 1;
                    model_data_end = data_end_time;
                }
                (!u.skipped, u.pre_loss, u.post_loss)
            }
            None => (false, None, None),
        };
        records.push(UpdateRunRecord {
            day,
            update_time,
            data_end: data_end_time,
            forecasts_issued: n_issued,
            model_version: issued_with,
            applied,
            pre_loss,
            post_loss,
            wall_ms: clock.elapsed().as_millis() as u64,
        });
    }
    info!(
        "simulated {} days, {} forecasts, {} updates applied",
        config.days,
        forecasts.len(),
        version
    );
    Ok(SimulationResult {
        records,
        forecasts,
        index,
        model,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub strategy_epochs: usize,
    pub strategy_lr: f64,
    pub horizon_h: usize,
    pub nrmse: f64,
    pub pearson: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct GridResult {
    pub rows: Vec<GridRow>,
    /// Per horizon: (horizon_h, epochs, lr) of the lowest nRMSE.
    pub best: Vec<(usize, usize, f64)>,
    pub simulations: Vec<(UpdateStrategy, SimulationResult)>,
}

/// Everything needed to score a simulation against the measurements.
#[derive(Debug, Clone, Copy)]
pub struct EvalTarget<'a> {
    pub truth: &'a PowerSeries,
    pub scaler: &'a QuantileScaler,
    /// Only forecasts issued at or after this time are scored.
    pub from: DateTime<Utc>,
    pub horizons_h: &'a [usize],
}

/// Runs every strategy from the same starting model and scores each.
pub fn run_strategy_grid(
    model: &ModelParams,
    series: &NormalizedSeries,
    trained_until: DateTime<Utc>,
    config: &SimulationConfig,
    strategies: &[UpdateStrategy],
    eval: EvalTarget<'_>,
) -> Result<GridResult> {
    let mut rows = Vec::new();
    let mut simulations = Vec::new();
    for s in strategies {
        let sim = run_update_simulation(model, series, trained_until, config, Some(s))?;
        let scored = sim.forecasts.filter_origins(|t| t >= eval.from);
        for &h in eval.horizons_h {
            let pairs = horizon_pairs(&scored, eval.truth, horizon_step(h));
            rows.push(GridRow {
                strategy_epochs: s.epochs,
                strategy_lr: s.lr,
                horizon_h: h,
                nrmse: nrmse_pairs(&pairs, eval.scaler)?,
                pearson: pearson_pairs(&pairs).ok(),
            });
        }
        simulations.push((*s, sim));
    }
    let best = eval
        .horizons_h
        .iter()
        .filter_map(|&h| {
            rows.iter()
                .filter(|r| r.horizon_h == h)
                .min_by(|a, b| a.nrmse.total_cmp(&b.nrmse))
                .map(|r| (h, r.strategy_epochs, r.strategy_lr))
        })
        .collect();
    Ok(GridResult {
        rows,
        best,
        simulations,
    })
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e.into(),
    })?;
    for r in rows {
        w.serialize(r)
            .map_err(|e| Error::Serde(format!("{}: {e}", path.display())))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_rows<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .enumerate()
        .map(|(i, r)| {
            r.map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 2,
                msg: e.to_string(),
            })
        })
        .collect()
}

/// Writes `strategy_epochs,strategy_lr,horizon_h,nrmse,pearson`.
pub fn write_grid_csv(path: impl AsRef<Path>, rows: &[GridRow]) -> Result<()> {
    write_rows(path.as_ref(), rows)
}

pub fn read_grid_csv(path: impl AsRef<Path>) -> Result<Vec<GridRow>> {
    read_rows(path.as_ref())
}

pub fn write_update_log(path: impl AsRef<Path>, records: &[UpdateRunRecord]) -> Result<()> {
    write_rows(path.as_ref(), records)
}

pub fn read_update_log(path: impl AsRef<Path>) -> Result<Vec<UpdateRunRecord>> {
    read_rows(path.as_ref())
}

pub fn write_forecast_index(path: impl AsRef<Path>, entries: &[ForecastIndexEntry]) -> Result<()> {
    write_rows(path.as_ref(), entries)
}

pub fn read_forecast_index(path: impl AsRef<Path>) -> Result<Vec<ForecastIndexEntry>> {
    read_rows(path.as_ref())
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CausalityReport {
    pub forecasts_checked: usize,
    pub violations: Vec<String>,
}

/// Checks that no archived forecast used measurements after its origin:
/// inputs end at the origin, every update applied before it ended before the
/// origin, and every archive row has an index entry and a positive step.
pub fn verify_causality(
    archive: &[ArchiveRow],
    index: &[ForecastIndexEntry],
    updates: &[UpdateRunRecord],
    lookback: usize,
) -> CausalityReport {
    let mut report = CausalityReport::default();
    let mut by_origin = std::collections::BTreeMap::new();
    for e in index {
        if by_origin.insert(e.origin, e).is_some() {
            report
                .violations
                .push(format!("origin {} indexed twice", format_timestamp(e.origin)));
        }
    }
    for e in index {
        report.forecasts_checked += 1;
        let o = format_timestamp(e.origin);
        if e.input_end > e.origin {
            report
                .violations
                .push(format!("{o}: inputs end at {}", format_timestamp(e.input_end)));
        }
        if e.origin - e.input_start != step() * (lookback as i32 - 1) {
            report
                .violations
                .push(format!("{o}: input window does not span the lookback"));
        }
        if e.model_data_end >= e.origin {
            report.violations.push(format!(
                "{o}: model trained on data up to {}",
                format_timestamp(e.model_data_end)
            ));
        }
        // Updates applied before this forecast was issued.
        let applied = updates.iter().filter(|u| u.applied).take(e.model_version);
        for u in applied {
            if u.data_end >= e.origin || u.update_time > e.origin {
                report.violations.push(format!(
                    "{o}: issued after an update using data up to {}",
                    format_timestamp(u.data_end)
                ));
            }
        }
        if updates.iter().filter(|u| u.applied).count() < e.model_version {
            report
                .violations
                .push(format!("{o}: model version {} has no update record", e.model_version));
        }
    }
    for r in archive {
        if !by_origin.contains_key(&r.origin) {
            report.violations.push(format!(
                "{}: archived forecast without index entry",
                format_timestamp(r.origin)
            ));
        }
        if r.horizon_step == 0 {
            report.violations.push(format!(
                "{}: horizon step 0 is not a forecast",
                format_timestamp(r.origin)
            ));
        }
    }
    report.violations.dedup();
    report
}

/// Parses a timestamp argument in the archive format.
pub fn parse_time_arg(s: &str) -> Result<DateTime<Utc>> {
    parse_timestamp(s).ok_or_else(|| Error::Config(format!("cannot parse time {s:?}")))
}
