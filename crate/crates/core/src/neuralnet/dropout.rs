use ndarray::{Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DropoutSpec {
    pub rate: f64,
    pub recurrent_rate: f64,
    pub seed: u64,
}

impl DropoutSpec {
    pub fn validate(&self) -> Result<()> {
        for r in [self.rate, self.recurrent_rate] {
            if !(0.0..1.0).contains(&r) {
                return Err(Error::Config(format!("dropout rate {r} outside [0, 1)")));
            }
        }
        Ok(())
    }
}

/// Inverted-dropout mask: entries are 0 or `1 / (1 - rate)`.
pub fn dropout_mask<R: Rng>(shape: (usize, usize), rate: f64, rng: &mut R) -> Array2<f64> {
    let keep = 1.0 / (1.0 - rate);
    Array2::from_shape_simple_fn(shape, || {
        if rate > 0.0 && rng.random::<f64>() < rate {
            0.0
        } else {
            keep
        }
    })
}

/// Training mode scales surviving units by `1 / (1 - rate)`; inference is the
/// identity. The mask is `None` whenever nothing was dropped.
pub fn dropout_forward<R: Rng>(
    x: ArrayView2<'_, f64>,
    rate: f64,
    mode: Mode,
    rng: &mut R,
) -> (Array2<f64>, Option<Array2<f64>>) {
    if mode == Mode::Infer || rate == 0.0 {
        return (x.to_owned(), None);
    }
    let mask = dropout_mask(x.dim(), rate, rng);
    (&x * &mask, Some(mask))
}
