//! Per-horizon error metrics, model comparison and the update improvement.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forecast::ForecastSet;
use crate::grid_data::{PowerSeries, STEPS_PER_HOUR};
use crate::preprocess::{sorted_quantile, QuantileScaler};

/// Lead times reported for every model, in hours.
pub const CANONICAL_HORIZONS_H: [usize; 7] = [1, 4, 8, 16, 24, 32, 48];

/// Horizon step index (1-based) for a lead time in hours.
pub fn horizon_step(hours: usize) -> usize {
    hours * STEPS_PER_HOUR
}

/// (forecast, truth) pairs at horizon step `k`, skipping unreliable or
/// missing truth.
pub fn horizon_pairs(forecasts: &ForecastSet, truth: &PowerSeries, k: usize) -> Vec<(f64, f64)> {
    forecasts
        .records
        .iter()
        .filter(|r| k >= 1 && k <= r.values.len())
        .filter_map(|r| {
            let i = truth.index_of(r.valid_time(k))?;
            truth.status()[i]
                .is_reliable()
                .then(|| (r.values[k - 1], truth.values()[i]))
        })
        .collect()
}

/// RMSE of quantile-scaled pairs.
pub fn nrmse_pairs(pairs: &[(f64, f64)], scaler: &QuantileScaler) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Data("no reliable forecast/truth pairs to score".into()));
    }
    let sse: f64 = pairs
        .iter()
        .map(|&(f, t)| (scaler.apply(f) - scaler.apply(t)).powi(2))
        .sum();
    Ok((sse / pairs.len() as f64).sqrt())
}

/// Sample Pearson correlation of the pairs.
pub fn pearson_pairs(pairs: &[(f64, f64)]) -> Result<f64> {
    if pairs.len() < 2 {
        return Err(Error::UndefinedCorrelation(format!("{} pairs", pairs.len())));
    }
    let n = pairs.len() as f64;
    let (mx, my) = pairs.iter().fold((0.0, 0.0), |(a, b), &(x, y)| (a + x, b + y));
    let (mx, my) = (mx / n, my / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for &(x, y) in pairs {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation("zero variance".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// nRMSE at horizon step `k`.
pub fn nrmse(forecasts: &ForecastSet, truth: &PowerSeries, scaler: &QuantileScaler, k: usize) -> Result<f64> {
    nrmse_pairs(&horizon_pairs(forecasts, truth, k), scaler)
}

/// Pearson r at horizon step `k`.
pub fn pearson(forecasts: &ForecastSet, truth: &PowerSeries, k: usize) -> Result<f64> {
    pearson_pairs(&horizon_pairs(forecasts, truth, k))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonReport {
    pub model: String,
    pub transformer: String,
    pub horizon_h: usize,
    pub nrmse: f64,
    /// `None` when either side has zero variance.
    pub pearson: Option<f64>,
    pub n: usize,
}

/// Scores one model on one transformer at each lead time in `horizons_h`.
pub fn evaluate_horizons(
    model: &str,
    transformer: &str,
    forecasts: &ForecastSet,
    truth: &PowerSeries,
    scaler: &QuantileScaler,
    horizons_h: &[usize],
) -> Result<Vec<HorizonReport>> {
    horizons_h
        .iter()
        .map(|&h| {
            let pairs = horizon_pairs(forecasts, truth, horizon_step(h));
            let nrmse =
                nrmse_pairs(&pairs, scaler).map_err(|e| Error::Data(format!("{model}/{transformer} at {h} h: {e}")))?;
            let pearson = match pearson_pairs(&pairs) {
                Ok(r) => Some(r),
                Err(e) => {
                    log::warn!("{model}/{transformer} at {h} h: {e}");
                    None
                }
            };
            Ok(HorizonReport {
                model: model.to_string(),
                transformer: transformer.to_string(),
                horizon_h: h,
                nrmse,
                pearson,
                n: pairs.len(),
            })
        })
        .collect()
}

/// Five-number summary of one model's nRMSE across transformers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxplotRow {
    pub model: String,
    pub horizon_h: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub mean: f64,
    pub count: usize,
}

pub fn five_number(values: &[f64]) -> Option<[f64; 5]> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Some([
        v[0],
        sorted_quantile(&v, 0.25),
        sorted_quantile(&v, 0.5),
        sorted_quantile(&v, 0.75),
        v[v.len() - 1],
    ])
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    /// Input rows in their original order.
    pub rows: Vec<HorizonReport>,
    /// One row per (model, horizon), models in first-appearance order.
    pub boxplots: Vec<BoxplotRow>,
    /// Model with the lowest mean nRMSE per horizon.
    pub winners: Vec<(usize, String)>,
}

fn model_order(rows: &[HorizonReport]) -> Vec<String> {
    let mut seen = Vec::new();
    for r in rows {
        if !seen.contains(&r.model) {
            seen.push(r.model.clone());
        }
    }
    seen
}

/// Aggregates reports of several models. Every model must cover the same
/// (transformer, horizon) keys with the same sample counts.
pub fn compare_models(rows: &[HorizonReport]) -> Result<Comparison> {
    let models = model_order(rows);
    let mut keys: BTreeMap<&str, BTreeMap<(&str, usize), usize>> = BTreeMap::new();
    for r in rows {
        let per_model = keys.entry(r.model.as_str()).or_default();
        if per_model.insert((r.transformer.as_str(), r.horizon_h), r.n).is_some() {
            return Err(Error::Alignment(format!(
                "duplicate row for {} / {} / {} h",
                r.model, r.transformer, r.horizon_h
            )));
        }
    }
    if let Some(first) = models.first() {
        let reference = &keys[first.as_str()];
        for m in &models[1..] {
            if &keys[m.as_str()] != reference {
                return Err(Error::Alignment(format!(
                    "model {m} was evaluated on different transformers, horizons or windows than {first}"
                )));
            }
        }
    }
    let horizons: BTreeSet<usize> = rows.iter().map(|r| r.horizon_h).collect();
    let mut boxplots = Vec::new();
    for m in &models {
        for &h in &horizons {
            let vals: Vec<f64> = rows
                .iter()
                .filter(|r| &r.model == m && r.horizon_h == h)
                .map(|r| r.nrmse)
                .collect();
            let [min, q1, median, q3, max] = five_number(&vals).expect("every model covers every horizon");
            boxplots.push(BoxplotRow {
                model: m.clone(),
                horizon_h: h,
                min,
                q1,
                median,
                q3,
                max,
                mean: vals.iter().sum::<f64>() / vals.len() as f64,
                count: vals.len(),
            });
        }
    }
    let winners = horizons
        .iter()
        .map(|&h| {
            let best = boxplots
                .iter()
                .filter(|b| b.horizon_h == h)
                .min_by(|a, b| a.mean.total_cmp(&b.mean))
                .expect("at least one model");
            (h, best.model.clone())
        })
        .collect();
    Ok(Comparison {
        rows: rows.to_vec(),
        boxplots,
        winners,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImprovementRecord {
    pub transformer: String,
    pub horizon_h: usize,
    /// Frozen minus updated nRMSE; positive when the update helps.
    pub delta: f64,
    /// `delta` relative to the frozen nRMSE.
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImprovementSummary {
    pub records: Vec<ImprovementRecord>,
    pub mean_delta: f64,
    pub mean_ratio: f64,
}

/// Per-(transformer, horizon) improvement of `updated` over `frozen`.
pub fn improvement(frozen: &[HorizonReport], updated: &[HorizonReport]) -> Result<ImprovementSummary> {
    let index = |rows: &[HorizonReport]| -> Result<BTreeMap<(String, usize), f64>> {
        let mut m = BTreeMap::new();
        for r in rows {
            if m.insert((r.transformer.clone(), r.horizon_h), r.nrmse).is_some() {
                return Err(Error::Alignment(format!(
                    "duplicate row for {} / {} h",
                    r.transformer, r.horizon_h
                )));
            }
        }
        Ok(m)
    };
    let f = index(frozen)?;
    let u = index(updated)?;
    if f.keys().ne(u.keys()) {
        return Err(Error::Alignment(
            "frozen and updated reports cover different (transformer, horizon) keys".into(),
        ));
    }
    if f.is_empty() {
        return Err(Error::Data("no rows to compare".into()));
    }
    let records: Vec<ImprovementRecord> = f
        .iter()
        .map(|((t, h), &fv)| {
            let delta = fv - u[&(t.clone(), *h)];
            ImprovementRecord {
                transformer: t.clone(),
                horizon_h: *h,
                delta,
                ratio: if fv != 0.0 { delta / fv } else { 0.0 },
            }
        })
        .collect();
    let n = records.len() as f64;
    Ok(ImprovementSummary {
        mean_delta: records.iter().map(|r| r.delta).sum::<f64>() / n,
        mean_ratio: records.iter().map(|r| r.ratio).sum::<f64>() / n,
        records,
    })
}

/// Mean nRMSE of `model` per horizon over the given transformers.
pub fn mean_nrmse_by_horizon(rows: &[HorizonReport], model: &str, transformers: &[&str]) -> BTreeMap<usize, f64> {
    let mut acc: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for r in rows
        .iter()
        .filter(|r| r.model == model && transformers.contains(&r.transformer.as_str()))
    {
        let e = acc.entry(r.horizon_h).or_default();
        e.0 += r.nrmse;
        e.1 += 1;
    }
    acc.into_iter().map(|(h, (s, n))| (h, s / n as f64)).collect()
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
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

/// Writes `model,transformer,horizon_h,nrmse,pearson,n`.
pub fn write_report_csv(path: impl AsRef<Path>, rows: &[HorizonReport]) -> Result<()> {
    write_csv(path.as_ref(), rows)
}

pub fn read_report_csv(path: impl AsRef<Path>) -> Result<Vec<HorizonReport>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    rdr.deserialize()
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

pub fn write_boxplot_csv(path: impl AsRef<Path>, rows: &[BoxplotRow]) -> Result<()> {
    write_csv(path.as_ref(), rows)
}

pub fn write_improvement_csv(path: impl AsRef<Path>, rows: &[ImprovementRecord]) -> Result<()> {
    write_csv(path.as_ref(), rows)
}

/// Plain-text table of mean nRMSE per model and horizon with the winner.
pub fn summary_table(cmp: &Comparison) -> String {
    let models = model_order(&cmp.rows);
    let horizons: Vec<usize> = cmp.winners.iter().map(|(h, _)| *h).collect();
    let width = models.iter().map(|m| m.len()).max().unwrap_or(5).max(5);
    let mut out = format!("{:<width$}", "model");
    for h in &horizons {
        out.push_str(&format!(" {:>8}", format!("{h}h")));
    }
    out.push('\n');
    for m in &models {
        out.push_str(&format!("{m:<width$}"));
        for h in &horizons {
            let b = cmp
                .boxplots
                .iter()
                .find(|b| &b.model == m && b.horizon_h == *h)
                .expect("complete grid");
            out.push_str(&format!(" {:>8.4}", b.mean));
        }
        out.push('\n');
    }
    out.push_str(&format!("{:<width$}", "best"));
    for (_, w) in &cmp.winners {
        out.push_str(&format!(" {w:>8}"));
    }
    out.push('\n');
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forecast::ForecastRecord;
    use crate::grid_data::{step, Status};
    use chrono::{DateTime, TimeZone, Utc};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn t0() -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2018, 1, 1, 0, 0, 0).unwrap()
    }

    fn unit_scaler() -> QuantileScaler {
        QuantileScaler {
            q_low: 0.0,
            q_high: 1.0,
            levels: (0.003, 0.997),
        }
    }

    fn truth_and_forecasts(values: &[f64], shift: f64) -> (PowerSeries, ForecastSet) {
        let truth = PowerSeries::reliable(t0(), values.to_vec());
        let records = (0..values.len() - 4)
            .map(|o| ForecastRecord {
                origin: truth.timestamp(o),
                values: (1..=4).map(|k| values[o + k] + shift).collect(),
            })
            .collect();
        (truth, ForecastSet { records })
    }

    #[test]
    fn perfect_forecast_scores_zero() {
        let v: Vec<f64> = (0..50).map(|i| (i as f64).sin()).collect();
        let (truth, f) = truth_and_forecasts(&v, 0.0);
        assert_eq!(nrmse(&f, &truth, &unit_scaler(), 4).unwrap(), 0.0);
        assert!((pearson(&f, &truth, 4).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_offset_gives_offset() {
        let v: Vec<f64> = (0..50).map(|i| (i as f64).sin()).collect();
        let (truth, f) = truth_and_forecasts(&v, 0.1);
        assert!((nrmse(&f, &truth, &unit_scaler(), 2).unwrap() - 0.1).abs() < 1e-12);
    }

    #[test]
    fn unreliable_truth_is_excluded() {
        let mut status = vec![Status::Reliable; 10];
        status[5] = Status::Unreliable;
        let truth = PowerSeries::new(t0(), vec![1.0; 10], status).unwrap();
        let f = ForecastSet {
            records: vec![
                ForecastRecord {
                    origin: t0() + step() * 4,
                    values: vec![2.0],
                },
                ForecastRecord {
                    origin: t0() + step() * 5,
                    values: vec![1.0],
                },
                ForecastRecord {
                    origin: t0() + step() * 9,
                    values: vec![5.0],
                },
            ],
        };
        let pairs = horizon_pairs(&f, &truth, 1);
        assert_eq!(pairs, vec![(1.0, 1.0)]);
        let empty = ForecastSet {
            records: vec![f.records[0].clone()],
        };
        assert!(matches!(nrmse(&empty, &truth, &unit_scaler(), 1), Err(Error::Data(_))));
    }

    #[test]
    fn pearson_signs_and_degenerate() {
        let pairs: Vec<(f64, f64)> = (0..20).map(|i| (-(i as f64), i as f64)).collect();
        assert!((pearson_pairs(&pairs).unwrap() + 1.0).abs() < 1e-12);
        let flat: Vec<(f64, f64)> = (0..20).map(|i| (3.0, i as f64)).collect();
        assert!(matches!(pearson_pairs(&flat), Err(Error::UndefinedCorrelation(_))));
    }

    #[test]
    fn shifted_truth_scores_worse() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let v: Vec<f64> = (0..200).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (truth, f) = truth_and_forecasts(&v, 0.0);
        let shifted = PowerSeries::reliable(t0() + step(), v.clone());
        let s = unit_scaler();
        assert!(nrmse(&f, &shifted, &s, 3).unwrap() > nrmse(&f, &truth, &s, 3).unwrap());
    }

    fn report(model: &str, tr: &str, h: usize, v: f64) -> HorizonReport {
        HorizonReport {
            model: model.into(),
            transformer: tr.into(),
            horizon_h: h,
            nrmse: v,
            pearson: Some(0.5),
            n: 10,
        }
    }

    #[test]
    fn single_point_boxplot_collapses() {
        let cmp = compare_models(&[report("lstm", "T1", 4, 0.3)]).unwrap();
        let b = &cmp.boxplots[0];
        assert_eq!([b.min, b.q1, b.median, b.q3, b.max], [0.3; 5]);
        assert_eq!(cmp.winners, vec![(4, "lstm".to_string())]);
    }

    #[test]
    fn median_over_seven_matches_sort() {
        let vals = [0.5, 0.1, 0.9, 0.3, 0.7, 0.2, 0.4];
        let rows: Vec<_> = vals
            .iter()
            .enumerate()
            .map(|(i, &v)| report("m", &format!("T{i}"), 1, v))
            .collect();
        let cmp = compare_models(&rows).unwrap();
        let mut sorted = vals.to_vec();
        sorted.sort_by(f64::total_cmp);
        assert_eq!(cmp.boxplots[0].median, sorted[3]);
        assert_eq!(cmp.boxplots[0].min, 0.1);
        assert_eq!(cmp.boxplots[0].max, 0.9);
    }

    #[test]
    fn appending_a_model_keeps_existing_rows() {
        let a = vec![report("a", "T1", 1, 0.2), report("a", "T2", 1, 0.4)];
        let mut ab = a.clone();
        ab.extend([report("b", "T1", 1, 0.1), report("b", "T2", 1, 0.3)]);
        let ca = compare_models(&a).unwrap();
        let cab = compare_models(&ab).unwrap();
        assert_eq!(&cab.rows[..2], &ca.rows[..]);
        assert_eq!(cab.boxplots[0], ca.boxplots[0]);
        assert_eq!(cab.winners, vec![(1, "b".to_string())]);
    }

    #[test]
    fn mismatched_windows_are_alignment_errors() {
        let mut b = report("b", "T1", 1, 0.1);
        b.n = 9;
        assert!(matches!(
            compare_models(&[report("a", "T1", 1, 0.2), b]),
            Err(Error::Alignment(_))
        ));
        assert!(matches!(
            compare_models(&[report("a", "T1", 1, 0.2), report("b", "T2", 1, 0.2)]),
            Err(Error::Alignment(_))
        ));
    }

    #[test]
    fn improvement_arithmetic() {
        let s = improvement(
            &[report("lstm", "T1", 1, 0.38)],
            &[report("lstm_updated", "T1", 1, 0.30)],
        )
        .unwrap();
        assert!((s.records[0].delta - 0.08).abs() < 1e-12);
        assert!((s.mean_delta - 0.08).abs() < 1e-12);
        let same = improvement(&[report("x", "T1", 1, 0.3)], &[report("x", "T1", 1, 0.3)]).unwrap();
        assert_eq!(same.mean_delta, 0.0);
        assert!(matches!(
            improvement(&[report("x", "T1", 1, 0.3)], &[report("x", "T1", 4, 0.3)]),
            Err(Error::Alignment(_))
        ));
    }

    #[test]
    fn report_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        let mut rows = vec![report("lstm", "T1", 1, 0.123_456_789_012_345_6)];
        rows.push(HorizonReport {
            pearson: None,
            ..report("lstm", "T2", 4, 1.0 / 3.0)
        });
        write_report_csv(&p, &rows).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("model,transformer,horizon_h,nrmse,pearson,n\n"));
        assert_eq!(read_report_csv(&p).unwrap(), rows);
    }

    proptest! {
        #[test]
        fn nrmse_matches_two_pass_oracle(
            pairs in proptest::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 1..60),
            lo in -50.0f64..0.0,
            span in 1.0f64..80.0,
        ) {
            let s = QuantileScaler { q_low: lo, q_high: lo + span, levels: (0.003, 0.997) };
            let scaled: Vec<(f64, f64)> = pairs.iter().map(|&(f, t)| ((f - lo) / span, (t - lo) / span)).collect();
            let sq: Vec<f64> = scaled.iter().map(|(f, t)| (f - t) * (f - t)).collect();
            let oracle = (sq.iter().sum::<f64>() / sq.len() as f64).sqrt();
            prop_assert!((nrmse_pairs(&pairs, &s).unwrap() - oracle).abs() < 1e-12);
        }

        #[test]
        fn pearson_affine_invariant(
            pairs in proptest::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 3..40),
            a in 0.1f64..10.0,
            b in -100.0f64..100.0,
        ) {
            if let Ok(r) = pearson_pairs(&pairs) {
                let t: Vec<(f64, f64)> = pairs.iter().map(|&(x, y)| (a * x + b, y)).collect();
                prop_assert!((pearson_pairs(&t).unwrap() - r).abs() < 1e-12);
                let id: Vec<(f64, f64)> = pairs.iter().map(|&(x, _)| (a * x + b, x)).collect();
                prop_assert!((pearson_pairs(&id).unwrap() - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn sample_count_matches_enumeration(
            flags in proptest::collection::vec(proptest::bool::ANY, 20..80),
            k in 1usize..5,
        ) {
            let n = flags.len();
            let status: Vec<Status> = flags.iter().map(|&f| if f { Status::Reliable } else { Status::Unreliable }).collect();
            let truth = PowerSeries::new(t0(), vec![0.0; n], status).unwrap();
            let f = ForecastSet {
                records: (0..n).map(|o| ForecastRecord { origin: truth.timestamp(o), values: vec![1.0; 4] }).collect(),
            };
            let mut oracle = 0;
            for o in 0..n {
                if o + k < n && flags[o + k] {
                    oracle += 1;
                }
            }
            prop_assert_eq!(horizon_pairs(&f, &truth, k).len(), oracle);
        }
    }
}
