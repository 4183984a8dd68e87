use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::init::glorot_uniform;
use super::params::{slice_of, slice_of_mut, ParamSet};
use crate::error::{Error, Result};

/// Affine layer `y = x Wᵀ + b` with `W: out x in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayerParams {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl DenseLayerParams {
    pub fn init<R: Rng>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        Self {
            w: glorot_uniform(outputs, inputs, rng),
            b: Array1::zeros(outputs),
        }
    }

    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            w: Array2::zeros((outputs, inputs)),
            b: Array1::zeros(outputs),
        }
    }

    pub fn inputs(&self) -> usize {
        self.w.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.w.nrows()
    }

    pub fn forward(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.inputs() {
            return Err(Error::Dimension(format!(
                "dense layer expects {} inputs, got {}",
                self.inputs(),
                x.ncols()
            )));
        }
        Ok(x.dot(&self.w.t()) + &self.b)
    }

    /// Accumulates parameter gradients into `grads` and returns `dL/dx`.
    pub fn backward(
        &self,
        x: ArrayView2<'_, f64>,
        dy: ArrayView2<'_, f64>,
        grads: &mut DenseLayerParams,
    ) -> Array2<f64> {
        ndarray::linalg::general_mat_mul(1.0, &dy.t(), &x, 1.0, &mut grads.w);
        grads.b += &dy.sum_axis(Axis(0));
        dy.dot(&self.w)
    }

    pub(crate) fn visit_named(&self, prefix: &str, f: &mut dyn FnMut(&str, &[f64])) {
        f(&format!("{prefix}.w"), slice_of(&self.w));
        f(&format!("{prefix}.b"), slice_of(&self.b));
    }

    pub(crate) fn visit_named_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        f(&format!("{prefix}.w"), slice_of_mut(&mut self.w));
        f(&format!("{prefix}.b"), slice_of_mut(&mut self.b));
    }
}

impl ParamSet for DenseLayerParams {
    fn visit(&self, f: &mut dyn FnMut(&str, &[f64])) {
        self.visit_named("dense", f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        self.visit_named_mut("dense", f);
    }
}
