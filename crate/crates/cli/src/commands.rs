//! Implementation of each CLI verb.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use log::{info, warn};

use vpflow_core::baselines::{persistence_forecasts, PersistenceKind};
use vpflow_core::evaluation::{
    compare_models, evaluate_horizons, improvement, mean_nrmse_by_horizon, read_report_csv, summary_table,
    write_boxplot_csv, write_improvement_csv, write_report_csv, HorizonReport,
};
use vpflow_core::forecast::{read_archive, records_from_archive, write_archive, ForecastSet};
use vpflow_core::grid_data::{
    load_power_csv, load_transformer_meta, load_weather_csv, step, FeatureFrame, PowerSeries, TransformerMeta,
};
use vpflow_core::model::{
    build_model, load_checkpoint, save_checkpoint, train_initial, Checkpoint, ModelParams, WindowSet,
    CHECKPOINT_VERSION,
};
use vpflow_core::preprocess::{split_by_dates, window_origins, InputScalers, NormalizedSeries, QuantileScaler};
use vpflow_core::synthgrid::{canonical_fleet, generate_scenario, write_bundle};
use vpflow_core::update_engine::{
    read_forecast_index, read_update_log, run_strategy_grid, run_update_simulation, verify_causality,
    write_forecast_index, write_grid_csv, write_update_log, EvalTarget, SimulationConfig, SimulationResult,
    UpdateStrategy,
};
use vpflow_core::{Error, Result};

use crate::config::ExperimentConfig;

pub const LSTM: &str = "lstm";
pub const LSTM_UPDATED: &str = "lstm_updated";

/// Models scored by `evaluate`, in report order.
pub fn report_models() -> [&'static str; 4] {
    [
        LSTM,
        LSTM_UPDATED,
        PersistenceKind::LastDay.model_id(),
        PersistenceKind::LastMeasurement.model_id(),
    ]
}

/// Where every artifact lives below the output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn model_dir(&self, id: &str) -> PathBuf {
        self.root.join("models").join(id)
    }

    pub fn checkpoint(&self, id: &str) -> PathBuf {
        self.model_dir(id).join("checkpoint.json")
    }

    pub fn runs(&self) -> PathBuf {
        self.root.join("runs")
    }

    pub fn run_dir(&self, id: &str, model: &str) -> PathBuf {
        self.runs().join(id).join(model)
    }

    pub fn reports(&self) -> PathBuf {
        self.root.join("reports")
    }
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

/// One transformer's measurements and model inputs on a common axis.
#[derive(Debug, Clone)]
pub struct TransformerData {
    pub meta: TransformerMeta,
    pub power: PowerSeries,
    pub features: FeatureFrame,
}

pub fn load_transformer(dir: &Path) -> Result<TransformerData> {
    let meta = load_transformer_meta(dir.join("meta"))?;
    let power = load_power_csv(dir.join("power.csv"))?;
    let weather = load_weather_csv(dir.join("weather.csv"))?;
    let features = FeatureFrame::build(&weather, meta.lat, meta.lon, power.start(), power.len())?;
    Ok(TransformerData { meta, power, features })
}

/// Transformer ids to process: the configured list, or every scenario
/// directory in name order.
pub fn transformer_ids(cfg: &ExperimentConfig) -> Result<Vec<String>> {
    if !cfg.data.transformers.is_empty() {
        return Ok(cfg.data.transformers.clone());
    }
    let dir = cfg.scenarios_dir();
    let entries = fs::read_dir(&dir).map_err(|e| Error::Io {
        path: dir.clone(),
        source: e,
    })?;
    let mut ids: Vec<String> = entries
        .filter_map(|e| e.ok())
        .filter(|e| e.path().join("power.csv").is_file())
        .filter_map(|e| e.file_name().into_string().ok())
        .collect();
    ids.sort();
    if ids.is_empty() {
        return Err(Error::Data(format!("no scenario directories in {}", dir.display())));
    }
    Ok(ids)
}

/// Per-transformer seed derived from the experiment seed.
pub fn transformer_seed(seed: u64, id: &str) -> u64 {
    // FNV-1a over the id, mixed with the seed.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in id.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h ^ seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Scaler for nRMSE, fitted on every reliable measurement of the transformer.
pub fn evaluation_scaler(power: &PowerSeries, levels: (f64, f64)) -> Result<QuantileScaler> {
    let reliable: Vec<f64> = power
        .values()
        .iter()
        .zip(power.status())
        .filter(|(_, s)| s.is_reliable())
        .map(|(&v, _)| v)
        .collect();
    QuantileScaler::fit(&reliable, levels)
}

pub fn cmd_generate(cfg: &ExperimentConfig) -> Result<Vec<String>> {
    let dir = cfg.scenarios_dir();
    create_dir(&dir)?;
    let mut ids = Vec::new();
    for spec in canonical_fleet(cfg.seed) {
        if !cfg.data.transformers.is_empty() && !cfg.data.transformers.contains(&spec.id) {
            continue;
        }
        let bundle = generate_scenario(&spec)?;
        write_bundle(dir.join(&spec.id), &bundle)?;
        info!("generated scenario {} ({} steps)", spec.id, bundle.power.len());
        ids.push(spec.id);
    }
    Ok(ids)
}

/// Origins whose inputs and targets both fall in `[from, to)`, allowing the
/// lookback to reach back before `from`.
fn origins_with_targets_in(len: usize, from: usize, to: usize, lookback: usize, horizon: usize) -> Result<Vec<usize>> {
    let all = window_origins(len.min(to), lookback, horizon, 1)?;
    Ok(all.into_iter().filter(|&o| o + 1 >= from).collect())
}

pub fn cmd_train(cfg: &ExperimentConfig) -> Result<()> {
    let layout = Layout::new(&cfg.out);
    let arch = cfg.architecture();
    for id in transformer_ids(cfg)? {
        let data = load_transformer(&cfg.scenarios_dir().join(&id))?;
        let split = cfg.split.spec();
        let idx = split.indices(&data.power)?;
        let ((train_power, train_features), _, _) = split_by_dates(&data.power, &data.features, &split)?;
        let scalers = InputScalers::fit(&train_power, &train_features)?;
        let series = scalers.normalize(&data.power, &data.features)?;
        let seed = transformer_seed(cfg.seed ^ cfg.training.seed, &id);
        let mut model = build_model(arch, scalers, seed)?;

        let train_origins = origins_with_targets_in(series.len(), 0, idx.val_start, arch.lookback, arch.output_dim)?;
        let val_origins = origins_with_targets_in(
            series.len(),
            idx.val_start,
            idx.test_start,
            arch.lookback,
            arch.output_dim,
        )?;
        if val_origins.is_empty() {
            return Err(Error::Config(format!(
                "validation span {} .. {} holds no window with a full {}-step target",
                cfg.split.train_end, cfg.split.val_end, arch.output_dim
            )));
        }
        let training = vpflow_core::model::TrainingConfig { seed, ..cfg.training };
        info!(
            "training {id}: {} parameters, {} training and {} validation windows",
            model.num_params(),
            train_origins.len(),
            val_origins.len()
        );
        let outcome = train_initial(
            &mut model,
            &WindowSet::new(&series, &train_origins),
            &WindowSet::new(&series, &val_origins),
            &training,
        )?;

        let dir = layout.model_dir(&id);
        create_dir(&dir)?;
        let ckpt = Checkpoint {
            version: CHECKPOINT_VERSION,
            transformer: id.clone(),
            model,
            optimizer: None,
        };
        let quantile = evaluation_scaler(&data.power, cfg.evaluation.quantile_levels)?;
        save_checkpoint(layout.checkpoint(&id), &ckpt, Some(quantile))?;
        let mut history = String::from("epoch,train_loss,val_loss\n");
        for r in &outcome.history {
            history.push_str(&format!("{},{},{}\n", r.epoch, r.train_loss, r.val_loss));
        }
        write_text(&dir.join("history.csv"), &history)?;
        info!(
            "{id}: best epoch {} of {} (val loss {:.5})",
            outcome.best_epoch,
            outcome.history.len(),
            outcome.best_val_loss
        );
    }
    Ok(())
}

/// A trained model with its transformer's data, ready for simulation.
pub struct Prepared {
    pub id: String,
    pub data: TransformerData,
    pub model: ModelParams,
    pub series: NormalizedSeries,
}

pub fn prepare(cfg: &ExperimentConfig, id: &str) -> Result<Prepared> {
    let layout = Layout::new(&cfg.out);
    let path = layout.checkpoint(id);
    if !path.is_file() {
        return Err(Error::Data(format!(
            "no checkpoint for {id} at {}; run `train` first",
            path.display()
        )));
    }
    let (ckpt, _) = load_checkpoint(&path)?;
    let data = load_transformer(&cfg.scenarios_dir().join(id))?;
    let series = ckpt.model.scalers.normalize(&data.power, &data.features)?;
    Ok(Prepared {
        id: id.to_string(),
        data,
        model: ckpt.model,
        series,
    })
}

/// The simulation spans validation and test: the model has not seen either.
pub fn simulation_config(cfg: &ExperimentConfig) -> SimulationConfig {
    SimulationConfig {
        start: cfg.split.train_end,
        days: (cfg.split.test_end - cfg.split.train_end).num_days() as usize,
        origin_stride_minutes: cfg.evaluation.origin_stride_minutes,
    }
}

fn trained_until(cfg: &ExperimentConfig) -> DateTime<Utc> {
    cfg.split.train_end - step()
}

fn write_run(dir: &Path, sim: &SimulationResult, truth: &PowerSeries) -> Result<()> {
    create_dir(dir)?;
    write_archive(dir.join("archive.csv"), &sim.forecasts, truth)?;
    write_forecast_index(dir.join("forecast_index.csv"), &sim.index)?;
    write_update_log(dir.join("updates.csv"), &sim.records)
}

/// Frozen-model forecasts plus both persistence baselines at the same
/// origins.
pub fn cmd_forecast(cfg: &ExperimentConfig) -> Result<()> {
    let layout = Layout::new(&cfg.out);
    for id in transformer_ids(cfg)? {
        let p = prepare(cfg, &id)?;
        let sim = run_update_simulation(&p.model, &p.series, trained_until(cfg), &simulation_config(cfg), None)?;
        write_run(&layout.run_dir(&id, LSTM), &sim, &p.data.power)?;
        let origins = sim.forecasts.origins();
        for kind in [PersistenceKind::LastDay, PersistenceKind::LastMeasurement] {
            let set = persistence_forecasts(kind, &p.data.power, &origins, p.model.arch.output_dim)?;
            let dir = layout.run_dir(&id, kind.model_id());
            create_dir(&dir)?;
            write_archive(dir.join("archive.csv"), &set, &p.data.power)?;
        }
        info!("{id}: {} forecast origins archived", origins.len());
    }
    Ok(())
}

pub fn cmd_update_run(cfg: &ExperimentConfig) -> Result<()> {
    let layout = Layout::new(&cfg.out);
    let strategy = cfg.update_strategy();
    for id in transformer_ids(cfg)? {
        let p = prepare(cfg, &id)?;
        let sim = run_update_simulation(
            &p.model,
            &p.series,
            trained_until(cfg),
            &simulation_config(cfg),
            Some(&strategy),
        )?;
        write_run(&layout.run_dir(&id, LSTM_UPDATED), &sim, &p.data.power)?;
        let applied = sim.records.iter().filter(|r| r.applied).count();
        info!("{id}: {applied} of {} daily updates applied", sim.records.len());
    }
    Ok(())
}

fn strategy_dir_name(s: &UpdateStrategy) -> String {
    format!("grid_e{}_lr{}", s.epochs, s.lr)
}

pub fn cmd_grid(cfg: &ExperimentConfig) -> Result<()> {
    let layout = Layout::new(&cfg.out);
    create_dir(&layout.reports())?;
    let strategies = cfg.grid_strategies();
    for id in transformer_ids(cfg)? {
        let p = prepare(cfg, &id)?;
        let scaler = evaluation_scaler(&p.data.power, cfg.evaluation.quantile_levels)?;
        let grid = run_strategy_grid(
            &p.model,
            &p.series,
            trained_until(cfg),
            &simulation_config(cfg),
            &strategies,
            EvalTarget {
                truth: &p.data.power,
                scaler: &scaler,
                from: cfg.split.val_end,
                horizons_h: &cfg.evaluation.horizons_h,
            },
        )?;
        for (s, sim) in &grid.simulations {
            write_run(&layout.run_dir(&id, &strategy_dir_name(s)), sim, &p.data.power)?;
        }
        write_grid_csv(layout.reports().join(format!("grid_{id}.csv")), &grid.rows)?;
        for (h, e, lr) in &grid.best {
            info!("{id}: best strategy at {h} h is {e} epochs, lr {lr}");
        }
    }
    Ok(())
}

/// Loads an archive and keeps the forecasts issued in the test period.
fn load_test_forecasts(path: &Path, cfg: &ExperimentConfig) -> Result<ForecastSet> {
    let set = records_from_archive(&read_archive(path)?)?;
    let (from, to) = (cfg.split.val_end, cfg.split.test_end);
    Ok(set.filter_origins(|t| t >= from && t < to))
}

/// Scores every model archive and writes the report, boxplot data and a
/// summary table. Returns the report rows.
pub fn cmd_evaluate(cfg: &ExperimentConfig) -> Result<Vec<HorizonReport>> {
    let layout = Layout::new(&cfg.out);
    let ids = transformer_ids(cfg)?;
    let mut missing = Vec::new();
    for id in &ids {
        for m in report_models() {
            let p = layout.run_dir(id, m).join("archive.csv");
            if !p.is_file() {
                missing.push(format!("{id}/{m}"));
            }
        }
    }
    if !missing.is_empty() {
        return Err(Error::Data(format!(
            "missing forecast archives: {}",
            missing.join(", ")
        )));
    }
    let mut rows = Vec::new();
    for id in &ids {
        let data = load_power_csv(cfg.scenarios_dir().join(id).join("power.csv"))?;
        let scaler = evaluation_scaler(&data, cfg.evaluation.quantile_levels)?;
        for m in report_models() {
            let set = load_test_forecasts(&layout.run_dir(id, m).join("archive.csv"), cfg)?;
            rows.extend(evaluate_horizons(
                m,
                id,
                &set,
                &data,
                &scaler,
                &cfg.evaluation.horizons_h,
            )?);
        }
    }
    create_dir(&layout.reports())?;
    write_report_csv(layout.reports().join("report.csv"), &rows)?;
    let cmp = compare_models(&rows)?;
    write_boxplot_csv(layout.reports().join("boxplot.csv"), &cmp.boxplots)?;
    let summary = summary_table(&cmp);
    write_text(&layout.reports().join("summary.txt"), &summary)?;
    println!("{summary}");
    Ok(rows)
}

/// Improvement of `updated` over `frozen` from an existing report.
pub fn cmd_compare(cfg: &ExperimentConfig, frozen: &str, updated: &str) -> Result<f64> {
    let layout = Layout::new(&cfg.out);
    let rows = read_report_csv(layout.reports().join("report.csv"))?;
    let pick = |m: &str| -> Result<Vec<HorizonReport>> {
        let v: Vec<_> = rows.iter().filter(|r| r.model == m).cloned().collect();
        if v.is_empty() {
            return Err(Error::Data(format!("report has no rows for model {m}")));
        }
        Ok(v)
    };
    let (f, u) = (pick(frozen)?, pick(updated)?);
    let summary = improvement(&f, &u)?;
    write_improvement_csv(layout.reports().join("improvement.csv"), &summary.records)?;
    let mut both = f.clone();
    both.extend(u.iter().cloned());
    let cmp = compare_models(&both)?;

    let transformers: Vec<String> = {
        let mut t: Vec<String> = f.iter().map(|r| r.transformer.clone()).collect();
        t.dedup();
        t
    };
    let refs: Vec<&str> = transformers.iter().map(String::as_str).collect();
    let mf: BTreeMap<usize, f64> = mean_nrmse_by_horizon(&f, frozen, &refs);
    let mu: BTreeMap<usize, f64> = mean_nrmse_by_horizon(&u, updated, &refs);
    let mut text = summary_table(&cmp);
    text.push_str(&format!(
        "\nimprovement of {updated} over {frozen} (nRMSE difference)\n"
    ));
    for (h, fv) in &mf {
        text.push_str(&format!("{h:>4} h  {:+.4}\n", fv - mu[h]));
    }
    text.push_str(&format!(
        "mean  {:+.4} ({:+.1}% relative)\n",
        summary.mean_delta,
        100.0 * summary.mean_ratio
    ));
    write_text(&layout.reports().join("compare.txt"), &text)?;
    println!("{text}");
    Ok(summary.mean_delta)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AuditSummary {
    pub runs: usize,
    pub forecasts: usize,
    pub violations: Vec<String>,
}

/// Audits every run directory that carries a forecast index.
pub fn cmd_verify_archive(cfg: &ExperimentConfig, runs: Option<&Path>) -> Result<AuditSummary> {
    let layout = Layout::new(&cfg.out);
    let root = runs.map_or_else(|| layout.runs(), Path::to_path_buf);
    let mut summary = AuditSummary::default();
    let mut transformers: Vec<PathBuf> = read_dirs(&root)?;
    transformers.sort();
    for tdir in transformers {
        let id = tdir
            .file_name()
            .and_then(|s| s.to_str())
            .unwrap_or_default()
            .to_string();
        let mut model_dirs = read_dirs(&tdir)?;
        model_dirs.sort();
        let indexed: Vec<PathBuf> = model_dirs
            .into_iter()
            .filter(|d| d.join("forecast_index.csv").is_file())
            .collect();
        if indexed.is_empty() {
            continue;
        }
        let lookback = match load_checkpoint(layout.checkpoint(&id)) {
            Ok((ckpt, _)) => ckpt.model.arch.lookback,
            Err(e) => {
                return Err(Error::Data(format!("cannot audit {id} without its checkpoint: {e}")));
            }
        };
        for dir in indexed {
            let archive = read_archive(dir.join("archive.csv"))?;
            let index = read_forecast_index(dir.join("forecast_index.csv"))?;
            let updates = if dir.join("updates.csv").is_file() {
                read_update_log(dir.join("updates.csv"))?
            } else {
                warn!("{}: no update log", dir.display());
                Vec::new()
            };
            let report = verify_causality(&archive, &index, &updates, lookback);
            summary.runs += 1;
            summary.forecasts += report.forecasts_checked;
            let label = dir.strip_prefix(&root).unwrap_or(&dir).display().to_string();
            summary
                .violations
                .extend(report.violations.into_iter().map(|v| format!("{label}: {v}")));
        }
    }
    println!(
        "audited {} runs, {} forecasts: {} look-ahead violations",
        summary.runs,
        summary.forecasts,
        summary.violations.len()
    );
    for v in &summary.violations {
        println!("  {v}");
    }
    Ok(summary)
}

fn read_dirs(path: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(entries
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir())
        .collect())
}
