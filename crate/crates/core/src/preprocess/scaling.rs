//! Z-score input normalization and robust quantile min-max scaling.

use log::warn;
use ndarray::{ArrayView2, ArrayViewMut2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-feature mean and standard deviation fitted on training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZScoreParams {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ZScoreParams {
    /// Fits one column per feature. Rows where `keep` is false are ignored.
    /// Constant features get `std = 1`.
    pub fn fit(data: ArrayView2<'_, f64>, keep: Option<&[bool]>) -> Result<Self> {
        if let Some(keep) = keep {
            if keep.len() != data.nrows() {
                return Err(Error::Dimension(format!(
                    "row mask has {} entries for {} rows",
                    keep.len(),
                    data.nrows()
                )));
            }
        }
        let rows: Vec<usize> = (0..data.nrows()).filter(|&i| keep.is_none_or(|k| k[i])).collect();
        if rows.is_empty() {
            return Err(Error::Data("no rows to fit normalization on".into()));
        }
        let n = rows.len() as f64;
        let mut mean = Vec::with_capacity(data.ncols());
        let mut std = Vec::with_capacity(data.ncols());
        for (j, col) in data.columns().into_iter().enumerate() {
            let m = rows.iter().map(|&i| col[i]).sum::<f64>() / n;
            let var = rows.iter().map(|&i| (col[i] - m).powi(2)).sum::<f64>() / n;
            let mut s = var.sqrt();
            if s.is_nan() || s <= 0.0 || s.is_infinite() {
                warn!("feature {j} has zero spread on the training split; using std = 1");
                s = 1.0;
            }
            mean.push(m);
            std.push(s);
        }
        Ok(Self { mean, std })
    }

    pub fn fit_series(values: &[f64], keep: Option<&[bool]>) -> Result<Self> {
        let view = ArrayView2::from_shape((values.len(), 1), values).map_err(|e| Error::Dimension(e.to_string()))?;
        Self::fit(view, keep)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, x: f64, feature: usize) -> f64 {
        (x - self.mean[feature]) / self.std[feature]
    }

    pub fn invert(&self, z: f64, feature: usize) -> f64 {
        z * self.std[feature] + self.mean[feature]
    }

    pub fn apply_rows(&self, mut data: ArrayViewMut2<'_, f64>) -> Result<()> {
        self.check_cols(data.ncols())?;
        for mut row in data.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = self.apply(*v, j);
            }
        }
        Ok(())
    }

    pub fn invert_rows(&self, mut data: ArrayViewMut2<'_, f64>) -> Result<()> {
        self.check_cols(data.ncols())?;
        for mut row in data.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = self.invert(*v, j);
            }
        }
        Ok(())
    }

    fn check_cols(&self, ncols: usize) -> Result<()> {
        if ncols != self.dim() {
            return Err(Error::Dimension(format!(
                "normalization fitted on {} features, data has {ncols}",
                self.dim()
            )));
        }
        Ok(())
    }
}

/// Linear-interpolated order statistic of already sorted data: the value at
/// fractional rank `(n - 1) * level`.
pub fn sorted_quantile(sorted: &[f64], level: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * level;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = h - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

pub const DEFAULT_QUANTILE_LEVELS: (f64, f64) = (0.003, 0.997);

/// Min-max scaling with robust quantiles standing in for the extremes.
/// Output is not clipped to [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantileScaler {
    pub q_low: f64,
    pub q_high: f64,
    pub levels: (f64, f64),
}

impl QuantileScaler {
    pub const MIN_SERIES_LEN: usize = 100;

    pub fn fit(series: &[f64], levels: (f64, f64)) -> Result<Self> {
        let (low, high) = levels;
        if !(0.0 < low && low < high && high < 1.0) {
            return Err(Error::Config(format!(
                "quantile levels must satisfy 0 < low < high < 1, got {levels:?}"
            )));
        }
        if series.len() < Self::MIN_SERIES_LEN {
            return Err(Error::Size(format!(
                "quantile scaler needs at least {} values, got {}",
                Self::MIN_SERIES_LEN,
                series.len()
            )));
        }
        if series.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite value in scaler input".into()));
        }
        let mut sorted = series.to_vec();
        sorted.sort_by(f64::total_cmp);
        let q_low = sorted_quantile(&sorted, low);
        let q_high = sorted_quantile(&sorted, high);
        if q_high <= q_low {
            return Err(Error::DegenerateScale(q_low));
        }
        Ok(Self { q_low, q_high, levels })
    }

    pub fn apply(&self, x: f64) -> f64 {
        (x - self.q_low) / (self.q_high - self.q_low)
    }

    pub fn invert(&self, s: f64) -> f64 {
        s * (self.q_high - self.q_low) + self.q_low
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};
    use proptest::prelude::*;

    #[test]
    fn zscore_examples() {
        let p = ZScoreParams {
            mean: vec![5.0],
            std: vec![2.0],
        };
        assert_eq!(p.apply(5.0, 0), 0.0);
        assert_eq!(p.apply(7.0, 0), 1.0);
    }

    #[test]
    fn zscore_fit_is_population_moments() {
        let data = array![[1.0, 10.0], [3.0, 10.0]];
        let p = ZScoreParams::fit(data.view(), None).unwrap();
        assert_eq!(p.mean, vec![2.0, 10.0]);
        assert_eq!(p.std, vec![1.0, 1.0]); // second column constant -> 1
    }

    #[test]
    fn zscore_fit_honours_row_mask() {
        let p = ZScoreParams::fit_series(&[1.0, 3.0, 1000.0], Some(&[true, true, false])).unwrap();
        assert_eq!(p.mean, vec![2.0]);
    }

    #[test]
    fn zscore_rows_round_trip() {
        let mut data = Array2::from_shape_fn((50, 3), |(i, j)| (i * 7 + j * 13) as f64 * 0.37 - 4.0);
        let orig = data.clone();
        let p = ZScoreParams::fit(data.view(), None).unwrap();
        p.apply_rows(data.view_mut()).unwrap();
        p.invert_rows(data.view_mut()).unwrap();
        for (a, b) in data.iter().zip(orig.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(p.apply_rows(Array2::zeros((2, 4)).view_mut()).is_err());
    }

    #[test]
    fn quantile_endpoints() {
        let series: Vec<f64> = (0..200).map(|i| (i as f64).sin() * 10.0).collect();
        let q = QuantileScaler::fit(&series, DEFAULT_QUANTILE_LEVELS).unwrap();
        assert_eq!(q.apply(q.q_low), 0.0);
        assert_eq!(q.apply(q.q_high), 1.0);
        // no clipping
        assert!(q.apply(q.q_high + 100.0) > 1.0);
    }

    #[test]
    fn constant_series_is_degenerate() {
        assert!(matches!(
            QuantileScaler::fit(&[3.0; 150], DEFAULT_QUANTILE_LEVELS),
            Err(Error::DegenerateScale(_))
        ));
    }

    #[test]
    fn short_series_and_bad_levels_rejected() {
        assert!(QuantileScaler::fit(&[1.0; 10], DEFAULT_QUANTILE_LEVELS).is_err());
        let s: Vec<f64> = (0..200).map(f64::from).collect();
        assert!(QuantileScaler::fit(&s, (0.9, 0.1)).is_err());
        assert!(QuantileScaler::fit(&s, (0.0, 0.5)).is_err());
    }

    #[test]
    fn literal_asymmetric_levels_supported() {
        let s: Vec<f64> = (0..=1000).map(f64::from).collect();
        let q = QuantileScaler::fit(&s, (0.0003, 0.997)).unwrap();
        assert!((q.q_low - 0.3).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn zscore_round_trip(x in -1e6f64..1e6, m in -1e3f64..1e3, s in 1e-3f64..1e3) {
            let p = ZScoreParams { mean: vec![m], std: vec![s] };
            let back = p.invert(p.apply(x, 0), 0);
            prop_assert!((back - x).abs() <= 1e-12 * x.abs().max(1.0));
        }

        #[test]
        fn quantile_scale_round_trip(x in -1e5f64..1e5) {
            let s: Vec<f64> = (0..300).map(|i| (i as f64 * 0.7).cos() * 50.0).collect();
            let q = QuantileScaler::fit(&s, DEFAULT_QUANTILE_LEVELS).unwrap();
            prop_assert!((q.invert(q.apply(x)) - x).abs() <= 1e-12 * x.abs().max(1.0));
        }
    }

    #[test]
    fn quantiles_of_integer_ramp() {
        // Shuffled 0..=1000: rank (n-1)p lands on integers for these levels.
        let mut s: Vec<f64> = (0..=1000).map(|i| ((i * 389) % 1001) as f64).collect();
        let q = QuantileScaler::fit(&s, DEFAULT_QUANTILE_LEVELS).unwrap();
        assert!((q.q_low - 3.0).abs() < 1e-9);
        assert!((q.q_high - 997.0).abs() < 1e-9);
        s.sort_by(f64::total_cmp);
        assert!((sorted_quantile(&s, 0.5) - 500.0).abs() < 1e-12);
        assert!((sorted_quantile(&s, 0.0005) - 0.5).abs() < 1e-9);
    }
}
