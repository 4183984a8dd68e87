//! Normalization, chronological splitting, sliding windows and batching.

mod scaling;

use chrono::{DateTime, Utc};
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid_data::{step, FeatureFrame, PowerSeries, Status, FEATURE_COUNT};

pub use scaling::{sorted_quantile, QuantileScaler, ZScoreParams, DEFAULT_QUANTILE_LEVELS};

/// Default lookback: one day of 15-minute steps.
pub const LOOKBACK: usize = 96;
/// Default horizon: 48 h of 15-minute steps.
pub const HORIZON: usize = 192;

/// The z-score pair a model carries: power (1 column) and exogenous features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputScalers {
    pub power: ZScoreParams,
    pub features: ZScoreParams,
}

impl InputScalers {
    /// Fits on a training split. Unreliable power readings are left out of the
    /// power moments.
    pub fn fit(power: &PowerSeries, features: &FeatureFrame) -> Result<Self> {
        check_aligned(power, features)?;
        let keep: Vec<bool> = power.status().iter().map(|s| s.is_reliable()).collect();
        Ok(Self {
            power: ZScoreParams::fit_series(power.values(), Some(&keep))?,
            features: ZScoreParams::fit(features.columns(), None)?,
        })
    }

    pub fn normalize(&self, power: &PowerSeries, features: &FeatureFrame) -> Result<NormalizedSeries> {
        check_aligned(power, features)?;
        if self.power.dim() != 1 || self.features.dim() != features.columns().ncols() {
            return Err(Error::Dimension("scaler/feature width mismatch".into()));
        }
        let power_z = power.values().iter().map(|&v| self.power.apply(v, 0)).collect();
        let mut feat = features.columns().to_owned();
        self.features.apply_rows(feat.view_mut())?;
        Ok(NormalizedSeries {
            start: power.start(),
            power: power_z,
            status: power.status().to_vec(),
            features: feat,
        })
    }
}

fn check_aligned(power: &PowerSeries, features: &FeatureFrame) -> Result<()> {
    if power.start() != features.start() || power.len() != features.len() {
        return Err(Error::Alignment(format!(
            "power [{} x{}] and features [{} x{}] are not on the same axis",
            power.start(),
            power.len(),
            features.start(),
            features.len()
        )));
    }
    Ok(())
}

/// Power and features after z-scoring, on the shared 15-minute axis.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedSeries {
    pub start: DateTime<Utc>,
    pub power: Vec<f64>,
    pub status: Vec<Status>,
    pub features: Array2<f64>,
}

impl NormalizedSeries {
    pub fn len(&self) -> usize {
        self.power.len()
    }

    pub fn is_empty(&self) -> bool {
        self.power.is_empty()
    }

    pub fn timestamp(&self, index: usize) -> DateTime<Utc> {
        self.start + step() * index as i32
    }

    /// The first `n` steps.
    pub fn prefix(&self, n: usize) -> NormalizedSeries {
        let n = n.min(self.len());
        NormalizedSeries {
            start: self.start,
            power: self.power[..n].to_vec(),
            status: self.status[..n].to_vec(),
            features: self.features.slice(ndarray::s![..n, ..]).to_owned(),
        }
    }
}

/// Chronological boundaries: train is `[.., train_end)`, validation
/// `[train_end, val_end)`, test `[val_end, ..]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_end: DateTime<Utc>,
    pub val_end: DateTime<Utc>,
}

/// Index boundaries of a split on a concrete series.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitIndices {
    pub val_start: usize,
    pub test_start: usize,
    pub len: usize,
}

impl SplitSpec {
    pub fn indices(&self, power: &PowerSeries) -> Result<SplitIndices> {
        if self.train_end >= self.val_end {
            return Err(Error::Config(format!(
                "train_end {} must precede val_end {}",
                self.train_end, self.val_end
            )));
        }
        let locate = |t: DateTime<Utc>, what: &str| -> Result<usize> {
            match power.offset_of(t) {
                Some(i) if i > 0 && (i as usize) < power.len() => Ok(i as usize),
                _ => Err(Error::Range(format!(
                    "{what} boundary {t} is not a step strictly inside {} .. {}",
                    power.start(),
                    power.end()
                ))),
            }
        };
        Ok(SplitIndices {
            val_start: locate(self.train_end, "train_end")?,
            test_start: locate(self.val_end, "val_end")?,
            len: power.len(),
        })
    }
}

pub type Segment = (PowerSeries, FeatureFrame);

/// Partitions aligned power and features at the split boundaries.
pub fn split_by_dates(
    power: &PowerSeries,
    features: &FeatureFrame,
    spec: &SplitSpec,
) -> Result<(Segment, Segment, Segment)> {
    check_aligned(power, features)?;
    let idx = spec.indices(power)?;
    let cut = |a: usize, b: usize| (power.slice(a, b), features.slice(a, b));
    Ok((
        cut(0, idx.val_start),
        cut(idx.val_start, idx.test_start),
        cut(idx.test_start, idx.len),
    ))
}

/// Forecast origins (index of the last lookback step) admissible in a series
/// of length `len`.
pub fn window_origins(len: usize, lookback: usize, horizon: usize, stride: usize) -> Result<Vec<usize>> {
    if lookback == 0 || horizon == 0 || stride == 0 {
        return Err(Error::Config("lookback, horizon and stride must be positive".into()));
    }
    if len < lookback + horizon {
        return Err(Error::Size(format!(
            "series of {len} steps is shorter than lookback {lookback} + horizon {horizon}"
        )));
    }
    Ok((lookback - 1..len - horizon).step_by(stride).collect())
}

/// One supervised example. `x_*` end at the forecast origin, `y` covers the
/// `horizon` steps after it.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSample {
    pub origin: usize,
    pub x_power: Array1<f64>,
    pub x_feat: Array2<f64>,
    pub y: Array1<f64>,
    pub y_mask: Array1<f64>,
}

impl WindowSample {
    pub fn extract(series: &NormalizedSeries, origin: usize, lookback: usize, horizon: usize) -> Self {
        let first = origin + 1 - lookback;
        let x_power = ArrayView1::from(&series.power[first..=origin]).to_owned();
        let x_feat = series.features.slice(s![first..=origin, ..]).to_owned();
        let y = ArrayView1::from(&series.power[origin + 1..=origin + horizon]).to_owned();
        let y_mask = series.status[origin + 1..=origin + horizon]
            .iter()
            .map(|s| if s.is_reliable() { 1.0 } else { 0.0 })
            .collect();
        Self {
            origin,
            x_power,
            x_feat,
            y,
            y_mask,
        }
    }

    pub fn feat_view(&self) -> ArrayView2<'_, f64> {
        self.x_feat.view()
    }
}

pub fn make_windows(
    series: &NormalizedSeries,
    lookback: usize,
    horizon: usize,
    stride: usize,
) -> Result<Vec<WindowSample>> {
    if series.features.ncols() != FEATURE_COUNT {
        return Err(Error::Dimension(format!(
            "expected {FEATURE_COUNT} feature columns, got {}",
            series.features.ncols()
        )));
    }
    Ok(window_origins(series.len(), lookback, horizon, stride)?
        .into_iter()
        .map(|o| WindowSample::extract(series, o, lookback, horizon))
        .collect())
}

/// Splits `0..n` into consecutive batches, shuffled when a seed is given.
/// The final short batch is kept.
pub fn make_batches(n: usize, batch_size: usize, shuffle_seed: Option<u64>) -> Vec<Vec<usize>> {
    assert!(batch_size > 0, "batch size must be positive");
    let mut order: Vec<usize> = (0..n).collect();
    if let Some(seed) = shuffle_seed {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::{Duration, TimeZone};
    use proptest::prelude::*;

    fn series(n: usize) -> NormalizedSeries {
        NormalizedSeries {
            start: Utc.with_ymd_and_hms(2018, 1, 1, 0, 0, 0).unwrap(),
            power: (0..n).map(|i| i as f64).collect(),
            status: vec![Status::Reliable; n],
            features: Array2::from_shape_fn((n, FEATURE_COUNT), |(i, j)| (i * 100 + j) as f64),
        }
    }

    fn frame(power: &PowerSeries) -> FeatureFrame {
        FeatureFrame::new(
            power.start(),
            Array2::from_shape_fn((power.len(), FEATURE_COUNT), |(i, j)| (i + j) as f64),
        )
        .unwrap()
    }

    #[test]
    fn window_counts() {
        assert_eq!(make_windows(&series(300), 96, 192, 1).unwrap().len(), 13);
        assert_eq!(make_windows(&series(288), 96, 192, 1).unwrap().len(), 1);
        assert!(matches!(make_windows(&series(287), 96, 192, 1), Err(Error::Size(_))));
    }

    #[test]
    fn window_contents_line_up() {
        let s = series(300);
        let w = &make_windows(&s, 96, 192, 1).unwrap()[5];
        assert_eq!(w.origin, 100);
        assert_eq!(w.x_power[95], 100.0);
        assert_eq!(w.y[0], 101.0);
        assert_eq!(w.x_feat[[95, 3]], 10003.0);
        assert_eq!(w.y.len(), 192);
    }

    #[test]
    fn batches_keep_remainder() {
        let sizes: Vec<usize> = make_batches(400, 192, Some(1)).iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![192, 192, 16]);
        assert_eq!(make_batches(400, 192, Some(9)), make_batches(400, 192, Some(9)));
        assert_ne!(make_batches(400, 192, Some(9)), make_batches(400, 192, Some(10)));
    }

    #[test]
    fn split_partitions_at_boundaries() {
        let t0 = Utc.with_ymd_and_hms(2018, 1, 1, 0, 0, 0).unwrap();
        let power = PowerSeries::reliable(t0, (0..96 * 3).map(f64::from).collect());
        let feats = frame(&power);
        let spec = SplitSpec {
            train_end: t0 + Duration::hours(36),
            val_end: t0 + Duration::hours(48),
        };
        let (train, val, test) = split_by_dates(&power, &feats, &spec).unwrap();
        assert_eq!(train.0.len() + val.0.len() + test.0.len(), power.len());
        assert_eq!(val.0.start(), spec.train_end);
        assert_eq!(test.0.start(), spec.val_end);
        assert_eq!(val.1.start(), spec.train_end);

        let outside = SplitSpec {
            train_end: t0 + Duration::days(5),
            val_end: t0 + Duration::days(6),
        };
        assert!(matches!(split_by_dates(&power, &feats, &outside), Err(Error::Range(_))));
    }

    #[test]
    fn normalizer_ignores_held_out_data() {
        let t0 = Utc.with_ymd_and_hms(2018, 1, 1, 0, 0, 0).unwrap();
        let power = PowerSeries::reliable(t0, (0..400).map(|i| (i as f64 * 0.1).sin()).collect());
        let feats = frame(&power);
        let spec = SplitSpec {
            train_end: t0 + Duration::minutes(15 * 200),
            val_end: t0 + Duration::minutes(15 * 300),
        };
        let ((tp, tf), _, _) = split_by_dates(&power, &feats, &spec).unwrap();
        let a = InputScalers::fit(&tp, &tf).unwrap();

        let (start, mut values, status) = power.clone().into_parts();
        for v in &mut values[300..] {
            *v += 1000.0;
        }
        let mutated = PowerSeries::new(start, values, status).unwrap();
        let ((tp2, tf2), _, _) = split_by_dates(&mutated, &feats, &spec).unwrap();
        let b = InputScalers::fit(&tp2, &tf2).unwrap();
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn window_count_formula(n in 10usize..400, l in 1usize..40, h in 1usize..60, stride in 1usize..7) {
            prop_assume!(n >= l + h);
            let origins = window_origins(n, l, h, stride).unwrap();
            prop_assert_eq!(origins.len(), (n - l - h) / stride + 1);
            for &o in &origins {
                prop_assert!(o + 1 >= l && o + h < n);
            }
        }

        #[test]
        fn last_input_precedes_first_target(n in 288usize..420) {
            let s = series(n);
            for w in make_windows(&s, 96, 192, 7).unwrap() {
                let last_x = s.timestamp(w.origin);
                let first_y = s.timestamp(w.origin + 1);
                prop_assert_eq!(last_x + Duration::minutes(15), first_y);
                prop_assert_eq!(w.x_power[95], w.origin as f64);
                prop_assert_eq!(w.y[0], (w.origin + 1) as f64);
            }
        }

        #[test]
        fn mask_tracks_status(flags in proptest::collection::vec(any::<bool>(), 300)) {
            let mut s = series(300);
            s.status = flags.iter().map(|&b| if b { Status::Unreliable } else { Status::Reliable }).collect();
            for w in make_windows(&s, 96, 192, 5).unwrap() {
                for k in 0..192 {
                    let flagged = flags[w.origin + 1 + k];
                    prop_assert_eq!(w.y_mask[k] == 0.0, flagged);
                }
            }
        }

        #[test]
        fn batches_cover_input(n in 1usize..600, bs in 1usize..200, seed in any::<u64>()) {
            let mut all: Vec<usize> = make_batches(n, bs, Some(seed)).into_iter().flatten().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        }

        #[test]
        fn splits_concatenate_to_original(n in 20usize..300, a in 1usize..100, b in 1usize..100) {
            let t0 = Utc.with_ymd_and_hms(2018, 1, 1, 0, 0, 0).unwrap();
            prop_assume!(a < b && b < n);
            let power = PowerSeries::reliable(t0, (0..n).map(|i| i as f64 * 1.5).collect());
            let feats = frame(&power);
            let spec = SplitSpec {
                train_end: t0 + Duration::minutes(15 * a as i64),
                val_end: t0 + Duration::minutes(15 * b as i64),
            };
            let (tr, va, te) = split_by_dates(&power, &feats, &spec).unwrap();
            let joined: Vec<f64> = [tr.0.values(), va.0.values(), te.0.values()].concat();
            prop_assert_eq!(joined.as_slice(), power.values());
            prop_assert_eq!(tr.1.len() + va.1.len() + te.1.len(), n);
        }
    }
}
