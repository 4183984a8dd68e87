//! Two-branch forward and backward passes.
//!
//! ```text
//! power  (T x 1)  -> LSTM -> LeakyReLU --+
//!                                         concat -> Dense+ReLU+Dropout -> Dense+ReLU+Dropout -> Dense (linear)
//! features (T x F) -> LSTM -> LeakyReLU --+
//! ```

use ndarray::{concatenate, s, Array2, Array3, ArrayView2, ArrayView3, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ArchitectureSpec;
use crate::error::{Error, Result};
use crate::neuralnet::activations::{leaky_relu, leaky_relu_grad, relu, relu_grad};
use crate::neuralnet::{
    dropout_mask, lstm_backward, lstm_forward, DenseLayerParams, LstmCache, LstmLayerParams, ParamSet,
};
use crate::preprocess::NormalizedSeries;

/// All trainable tensors of the network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams {
    pub lstm_power: LstmLayerParams,
    pub lstm_features: LstmLayerParams,
    pub dense1: DenseLayerParams,
    pub dense2: DenseLayerParams,
    pub output: DenseLayerParams,
}

impl NetworkParams {
    pub fn init<R: Rng>(arch: &ArchitectureSpec, rng: &mut R) -> Self {
        Self {
            lstm_power: LstmLayerParams::init(1, arch.lstm_units, rng),
            lstm_features: LstmLayerParams::init(arch.feat_dim, arch.lstm_units, rng),
            dense1: DenseLayerParams::init(2 * arch.lstm_units, arch.dense1, rng),
            dense2: DenseLayerParams::init(arch.dense1, arch.dense2, rng),
            output: DenseLayerParams::init(arch.dense2, arch.output_dim, rng),
        }
    }

    pub fn zeros(arch: &ArchitectureSpec) -> Self {
        Self {
            lstm_power: LstmLayerParams::zeros(1, arch.lstm_units),
            lstm_features: LstmLayerParams::zeros(arch.feat_dim, arch.lstm_units),
            dense1: DenseLayerParams::zeros(2 * arch.lstm_units, arch.dense1),
            dense2: DenseLayerParams::zeros(arch.dense1, arch.dense2),
            output: DenseLayerParams::zeros(arch.dense2, arch.output_dim),
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.visit_mut(&mut |_, t| t.fill(0.0));
        z
    }

    /// Tensor shapes, for checking that updates never alter the architecture.
    pub fn tensor_shapes(&self) -> Vec<Vec<usize>> {
        vec![
            self.lstm_power.w.shape().to_vec(),
            self.lstm_power.u.shape().to_vec(),
            self.lstm_power.b.shape().to_vec(),
            self.lstm_features.w.shape().to_vec(),
            self.lstm_features.u.shape().to_vec(),
            self.lstm_features.b.shape().to_vec(),
            self.dense1.w.shape().to_vec(),
            self.dense1.b.shape().to_vec(),
            self.dense2.w.shape().to_vec(),
            self.dense2.b.shape().to_vec(),
            self.output.w.shape().to_vec(),
            self.output.b.shape().to_vec(),
        ]
    }
}

impl ParamSet for NetworkParams {
    fn visit(&self, f: &mut dyn FnMut(&str, &[f64])) {
        self.lstm_power.visit_named("lstm_power", f);
        self.lstm_features.visit_named("lstm_features", f);
        self.dense1.visit_named("dense1", f);
        self.dense2.visit_named("dense2", f);
        self.output.visit_named("output", f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        self.lstm_power.visit_named_mut("lstm_power", f);
        self.lstm_features.visit_named_mut("lstm_features", f);
        self.dense1.visit_named_mut("dense1", f);
        self.dense2.visit_named_mut("dense2", f);
        self.output.visit_named_mut("output", f);
    }
}

/// Model inputs and targets for a batch, time-major.
#[derive(Debug, Clone)]
pub struct Batch {
    /// T x B x 1
    pub x_power: Array3<f64>,
    /// T x B x F
    pub x_feat: Array3<f64>,
    /// B x H
    pub y: Array2<f64>,
    /// B x H, 1 where the target is reliable
    pub mask: Array2<f64>,
}

impl Batch {
    /// Gathers windows ending at `origins` from a normalized series.
    pub fn gather(series: &NormalizedSeries, origins: &[usize], lookback: usize, horizon: usize) -> Self {
        let b = origins.len();
        let f = series.features.ncols();
        let mut x_power = Array3::zeros((lookback, b, 1));
        let mut x_feat = Array3::zeros((lookback, b, f));
        let mut y = Array2::zeros((b, horizon));
        let mut mask = Array2::zeros((b, horizon));
        for (j, &o) in origins.iter().enumerate() {
            let first = o + 1 - lookback;
            for t in 0..lookback {
                x_power[[t, j, 0]] = series.power[first + t];
                x_feat.slice_mut(s![t, j, ..]).assign(&series.features.row(first + t));
            }
            // Windows near the end of the series may lack targets; those are masked.
            for k in 0..horizon {
                let i = o + 1 + k;
                if i < series.len() {
                    y[[j, k]] = series.power[i];
                    mask[[j, k]] = if series.status[i].is_reliable() { 1.0 } else { 0.0 };
                }
            }
        }
        Self {
            x_power,
            x_feat,
            y,
            mask,
        }
    }

    pub fn len(&self) -> usize {
        self.y.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.y.nrows() == 0
    }
}

/// Dropout masks for one training forward pass. Recurrent masks are fixed
/// over the sequence.
#[derive(Debug, Clone)]
pub struct DropoutMasks {
    pub recurrent_power: Option<Array2<f64>>,
    pub recurrent_features: Option<Array2<f64>>,
    pub dense1: Option<Array2<f64>>,
    pub dense2: Option<Array2<f64>>,
}

impl DropoutMasks {
    pub fn none() -> Self {
        Self {
            recurrent_power: None,
            recurrent_features: None,
            dense1: None,
            dense2: None,
        }
    }

    pub fn sample<R: Rng>(arch: &ArchitectureSpec, batch: usize, rng: &mut R) -> Self {
        let draw = |rng: &mut R, width: usize, rate: f64| (rate > 0.0).then(|| dropout_mask((batch, width), rate, rng));
        Self {
            recurrent_power: draw(rng, arch.lstm_units, arch.recurrent_dropout),
            recurrent_features: draw(rng, arch.lstm_units, arch.recurrent_dropout),
            dense1: draw(rng, arch.dense1, arch.dropout),
            dense2: draw(rng, arch.dense2, arch.dropout),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ForwardCache {
    lstm_power: LstmCache,
    lstm_features: LstmCache,
    h_power: Array2<f64>,
    h_features: Array2<f64>,
    concat: Array2<f64>,
    z1: Array2<f64>,
    a1: Array2<f64>,
    z2: Array2<f64>,
    a2: Array2<f64>,
    masks: DropoutMasks,
}

fn apply_mask(x: &mut Array2<f64>, mask: Option<&Array2<f64>>) {
    if let Some(m) = mask {
        *x *= m;
    }
}

/// Runs the network. `masks = None` is inference mode (no dropout).
pub fn forward(
    net: &NetworkParams,
    arch: &ArchitectureSpec,
    x_power: ArrayView3<'_, f64>,
    x_feat: ArrayView3<'_, f64>,
    masks: Option<&DropoutMasks>,
    keep_cache: bool,
) -> Result<(Array2<f64>, Option<ForwardCache>)> {
    if x_power.dim().0 != x_feat.dim().0 || x_power.dim().1 != x_feat.dim().1 {
        return Err(Error::Dimension(format!(
            "power input {:?} and feature input {:?} disagree on steps/batch",
            x_power.dim(),
            x_feat.dim()
        )));
    }
    let none = DropoutMasks::none();
    let m = masks.unwrap_or(&none);
    let (h_power, c_power) = lstm_forward(
        x_power,
        &net.lstm_power,
        m.recurrent_power.as_ref().map(|a| a.view()),
        keep_cache,
    )?;
    let (h_features, c_features) = lstm_forward(
        x_feat,
        &net.lstm_features,
        m.recurrent_features.as_ref().map(|a| a.view()),
        keep_cache,
    )?;
    let slope = arch.leaky_slope;
    let concat = concatenate(
        Axis(1),
        &[
            h_power.mapv(|v| leaky_relu(v, slope)).view(),
            h_features.mapv(|v| leaky_relu(v, slope)).view(),
        ],
    )
    .expect("equal batch sizes");

    let z1 = net.dense1.forward(concat.view())?;
    let mut a1 = z1.mapv(relu);
    apply_mask(&mut a1, m.dense1.as_ref());
    let z2 = net.dense2.forward(a1.view())?;
    let mut a2 = z2.mapv(relu);
    apply_mask(&mut a2, m.dense2.as_ref());
    let out = net.output.forward(a2.view())?;

    let cache = if keep_cache {
        Some(ForwardCache {
            lstm_power: c_power.expect("cache requested"),
            lstm_features: c_features.expect("cache requested"),
            h_power,
            h_features,
            concat,
            z1,
            a1,
            z2,
            a2,
            masks: m.clone(),
        })
    } else {
        None
    };
    Ok((out, cache))
}

/// Gradients of all parameters given `dL/d(output)`.
pub fn backward(
    net: &NetworkParams,
    arch: &ArchitectureSpec,
    cache: &ForwardCache,
    d_out: ArrayView2<'_, f64>,
) -> NetworkParams {
    let mut grads = NetworkParams::zeros(arch);
    let mut da2 = net.output.backward(cache.a2.view(), d_out, &mut grads.output);
    apply_mask(&mut da2, cache.masks.dense2.as_ref());
    Zip::from(&mut da2).and(&cache.z2).for_each(|d, &z| *d *= relu_grad(z));
    let mut da1 = net.dense2.backward(cache.a1.view(), da2.view(), &mut grads.dense2);
    apply_mask(&mut da1, cache.masks.dense1.as_ref());
    Zip::from(&mut da1).and(&cache.z1).for_each(|d, &z| *d *= relu_grad(z));
    let d_concat = net.dense1.backward(cache.concat.view(), da1.view(), &mut grads.dense1);

    let units = arch.lstm_units;
    let slope = arch.leaky_slope;
    let mut dh_power = d_concat.slice(s![.., ..units]).to_owned();
    Zip::from(&mut dh_power)
        .and(&cache.h_power)
        .for_each(|d, &h| *d *= leaky_relu_grad(h, slope));
    let mut dh_features = d_concat.slice(s![.., units..]).to_owned();
    Zip::from(&mut dh_features)
        .and(&cache.h_features)
        .for_each(|d, &h| *d *= leaky_relu_grad(h, slope));

    lstm_backward(
        &net.lstm_power,
        &cache.lstm_power,
        dh_power.view(),
        &mut grads.lstm_power,
        false,
    );
    lstm_backward(
        &net.lstm_features,
        &cache.lstm_features,
        dh_features.view(),
        &mut grads.lstm_features,
        false,
    );
    grads
}
