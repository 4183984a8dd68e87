//! Batched LSTM layer with variational recurrent dropout and full
//! backpropagation through time.
//!
//! Gate blocks are stacked in the order input, forget, candidate, output
//! along the first axis of `w`, `u` and `b`. Sequences are time-major:
//! `x[t, batch, feature]`.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, Array3, ArrayView2, ArrayView3, ArrayViewMut2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::activations::{sigmoid, sigmoid_grad_from_output, tanh_grad_from_output};
use super::init::{glorot_uniform, orthogonal};
use super::params::{slice_of, slice_of_mut, ParamSet};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmLayerParams {
    /// Input weights, `4h x d`.
    pub w: Array2<f64>,
    /// Recurrent weights, `4h x h`.
    pub u: Array2<f64>,
    pub b: Array1<f64>,
}

impl LstmLayerParams {
    /// Glorot input weights, orthogonal recurrent weights, forget bias 1.
    pub fn init<R: Rng>(inputs: usize, hidden: usize, rng: &mut R) -> Self {
        let w = glorot_uniform(4 * hidden, inputs, rng);
        let u = orthogonal(4 * hidden, hidden, rng);
        let mut b = Array1::zeros(4 * hidden);
        b.slice_mut(s![hidden..2 * hidden]).fill(1.0);
        Self { w, u, b }
    }

    pub fn zeros(inputs: usize, hidden: usize) -> Self {
        Self {
            w: Array2::zeros((4 * hidden, inputs)),
            u: Array2::zeros((4 * hidden, hidden)),
            b: Array1::zeros(4 * hidden),
        }
    }

    pub fn hidden(&self) -> usize {
        self.u.ncols()
    }

    pub fn inputs(&self) -> usize {
        self.w.ncols()
    }

    fn check(&self) -> Result<()> {
        let h = self.hidden();
        if self.u.nrows() != 4 * h || self.w.nrows() != 4 * h || self.b.len() != 4 * h {
            return Err(Error::Dimension(format!(
                "inconsistent LSTM parameter shapes w{:?} u{:?} b{}",
                self.w.dim(),
                self.u.dim(),
                self.b.len()
            )));
        }
        Ok(())
    }

    pub(crate) fn visit_named(&self, prefix: &str, f: &mut dyn FnMut(&str, &[f64])) {
        f(&format!("{prefix}.w"), slice_of(&self.w));
        f(&format!("{prefix}.u"), slice_of(&self.u));
        f(&format!("{prefix}.b"), slice_of(&self.b));
    }

    pub(crate) fn visit_named_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        f(&format!("{prefix}.w"), slice_of_mut(&mut self.w));
        f(&format!("{prefix}.u"), slice_of_mut(&mut self.u));
        f(&format!("{prefix}.b"), slice_of_mut(&mut self.b));
    }
}

impl ParamSet for LstmLayerParams {
    fn visit(&self, f: &mut dyn FnMut(&str, &[f64])) {
        self.visit_named("lstm", f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        self.visit_named_mut("lstm", f);
    }
}

/// Turns pre-activations `z` (B x 4h) into gate activations in place and
/// writes the new cell state, its tanh, and the hidden state.
fn activate_step(
    mut z: ArrayViewMut2<'_, f64>,
    c_prev: ArrayView2<'_, f64>,
    mut c: ArrayViewMut2<'_, f64>,
    mut tanh_c: ArrayViewMut2<'_, f64>,
    mut h_out: ArrayViewMut2<'_, f64>,
) {
    let hidden = c.ncols();
    for r in 0..z.nrows() {
        let mut zr = z.row_mut(r);
        let zr = zr.as_slice_mut().expect("contiguous gate row");
        let (i_g, rest) = zr.split_at_mut(hidden);
        let (f_g, rest) = rest.split_at_mut(hidden);
        let (g_g, o_g) = rest.split_at_mut(hidden);
        for j in 0..hidden {
            let i = sigmoid(i_g[j]);
            let f = sigmoid(f_g[j]);
            let g = g_g[j].tanh();
            let o = sigmoid(o_g[j]);
            i_g[j] = i;
            f_g[j] = f;
            g_g[j] = g;
            o_g[j] = o;
            let cn = f * c_prev[[r, j]] + i * g;
            let tc = cn.tanh();
            c[[r, j]] = cn;
            tanh_c[[r, j]] = tc;
            h_out[[r, j]] = o * tc;
        }
    }
}

/// Intermediate values of one single-step cell evaluation.
#[derive(Debug, Clone)]
pub struct CellCache {
    /// Activated gates, B x 4h.
    pub gates: Array2<f64>,
    pub tanh_c: Array2<f64>,
}

/// One LSTM step. `recurrent_mask` (B x h) multiplies `h_prev` inside the
/// recurrent product only.
pub fn lstm_cell_forward(
    x_t: ArrayView2<'_, f64>,
    h_prev: ArrayView2<'_, f64>,
    c_prev: ArrayView2<'_, f64>,
    params: &LstmLayerParams,
    recurrent_mask: Option<ArrayView2<'_, f64>>,
) -> Result<(Array2<f64>, Array2<f64>, CellCache)> {
    params.check()?;
    let hidden = params.hidden();
    let batch = x_t.nrows();
    if x_t.ncols() != params.inputs()
        || h_prev.dim() != (batch, hidden)
        || c_prev.dim() != (batch, hidden)
        || recurrent_mask.is_some_and(|m| m.dim() != (batch, hidden))
    {
        return Err(Error::Dimension("LSTM cell input shapes".into()));
    }
    let hm = match recurrent_mask {
        Some(m) => &h_prev * &m,
        None => h_prev.to_owned(),
    };
    let mut z = x_t.dot(&params.w.t()) + &params.b;
    general_mat_mul(1.0, &hm, &params.u.t(), 1.0, &mut z);
    let mut c = Array2::zeros((batch, hidden));
    let mut tanh_c = Array2::zeros((batch, hidden));
    let mut h = Array2::zeros((batch, hidden));
    activate_step(z.view_mut(), c_prev, c.view_mut(), tanh_c.view_mut(), h.view_mut());
    Ok((h, c, CellCache { gates: z, tanh_c }))
}

/// Everything the backward pass needs from a training-mode forward pass.
#[derive(Debug, Clone)]
pub struct LstmCache {
    x: Array3<f64>,
    gates: Array3<f64>,
    /// Cell states, `T + 1` slices with the zero initial state first.
    cells: Array3<f64>,
    tanh_c: Array3<f64>,
    /// `h_{t-1}` after the recurrent mask, as fed to `u`.
    h_prev_masked: Array3<f64>,
    mask: Option<Array2<f64>>,
}

/// Runs the layer over a whole sequence from zero state and returns the last
/// hidden state (B x h). The cache is populated only when requested.
pub fn lstm_forward(
    x: ArrayView3<'_, f64>,
    params: &LstmLayerParams,
    recurrent_mask: Option<ArrayView2<'_, f64>>,
    keep_cache: bool,
) -> Result<(Array2<f64>, Option<LstmCache>)> {
    params.check()?;
    let (steps, batch, inputs) = x.dim();
    let hidden = params.hidden();
    if steps == 0 {
        return Err(Error::Size("LSTM input sequence is empty".into()));
    }
    if inputs != params.inputs() {
        return Err(Error::Dimension(format!(
            "LSTM expects {} inputs per step, got {inputs}",
            params.inputs()
        )));
    }
    if recurrent_mask.is_some_and(|m| m.dim() != (batch, hidden)) {
        return Err(Error::Dimension("recurrent mask shape".into()));
    }

    let x_std = x.as_standard_layout();
    let flat = x_std
        .view()
        .into_shape_with_order((steps * batch, inputs))
        .expect("standard layout reshape");
    let mut gates2 = Array2::zeros((steps * batch, 4 * hidden));
    gates2.assign(&params.b);
    general_mat_mul(1.0, &flat, &params.w.t(), 1.0, &mut gates2);
    let mut gates = gates2
        .into_shape_with_order((steps, batch, 4 * hidden))
        .expect("gate reshape");

    let mut cells = Array3::zeros((steps + 1, batch, hidden));
    let mut tanh_c = Array3::zeros((steps, batch, hidden));
    let mut h_prev_masked = Array3::zeros((steps, batch, hidden));
    let mut h = Array2::<f64>::zeros((batch, hidden));

    for t in 0..steps {
        let mut hm = h_prev_masked.index_axis_mut(Axis(0), t);
        match recurrent_mask {
            Some(m) => Zip::from(&mut hm).and(&h).and(&m).for_each(|o, &a, &b| *o = a * b),
            None => hm.assign(&h),
        }
        let mut z = gates.index_axis_mut(Axis(0), t);
        general_mat_mul(1.0, &hm, &params.u.t(), 1.0, &mut z);
        let (before, mut after) = cells.view_mut().split_at(Axis(0), t + 1);
        activate_step(
            z,
            before.index_axis(Axis(0), t),
            after.index_axis_mut(Axis(0), 0),
            tanh_c.index_axis_mut(Axis(0), t),
            h.view_mut(),
        );
    }

    let cache = keep_cache.then(|| LstmCache {
        x: x_std.into_owned(),
        gates,
        cells,
        tanh_c,
        h_prev_masked,
        mask: recurrent_mask.map(|m| m.to_owned()),
    });
    Ok((h, cache))
}

/// Backpropagates `dh_last` (gradient w.r.t. the final hidden state) through
/// time. Parameter gradients are accumulated into `grads`; the input
/// gradient (T x B x d) is returned when `want_input_grad` is set.
pub fn lstm_backward(
    params: &LstmLayerParams,
    cache: &LstmCache,
    dh_last: ArrayView2<'_, f64>,
    grads: &mut LstmLayerParams,
    want_input_grad: bool,
) -> Option<Array3<f64>> {
    let (steps, batch, _) = cache.gates.dim();
    let hidden = params.hidden();
    let mut dz_all = Array3::<f64>::zeros((steps, batch, 4 * hidden));
    let mut dh = dh_last.to_owned();
    let mut dc = Array2::<f64>::zeros((batch, hidden));

    for t in (0..steps).rev() {
        let gates = cache.gates.index_axis(Axis(0), t);
        let tanh_c = cache.tanh_c.index_axis(Axis(0), t);
        let c_prev = cache.cells.index_axis(Axis(0), t);
        let mut dz = dz_all.index_axis_mut(Axis(0), t);
        for r in 0..batch {
            let g_row = gates.row(r);
            let mut dz_row = dz.row_mut(r);
            for j in 0..hidden {
                let i = g_row[j];
                let f = g_row[hidden + j];
                let g = g_row[2 * hidden + j];
                let o = g_row[3 * hidden + j];
                let tc = tanh_c[[r, j]];
                let dh_rj = dh[[r, j]];
                let d_o = dh_rj * tc;
                let dct = dc[[r, j]] + dh_rj * o * tanh_grad_from_output(tc);
                dz_row[j] = dct * g * sigmoid_grad_from_output(i);
                dz_row[hidden + j] = dct * c_prev[[r, j]] * sigmoid_grad_from_output(f);
                dz_row[2 * hidden + j] = dct * i * tanh_grad_from_output(g);
                dz_row[3 * hidden + j] = d_o * sigmoid_grad_from_output(o);
                dc[[r, j]] = dct * f;
            }
        }
        if t > 0 {
            dh = dz.dot(&params.u);
            if let Some(m) = &cache.mask {
                dh *= m;
            }
        }
    }

    let dz_flat = dz_all
        .view()
        .into_shape_with_order((steps * batch, 4 * hidden))
        .expect("dz reshape");
    let hm_flat = cache
        .h_prev_masked
        .view()
        .into_shape_with_order((steps * batch, hidden))
        .expect("h reshape");
    let x_flat = cache
        .x
        .view()
        .into_shape_with_order((steps * batch, cache.x.dim().2))
        .expect("x reshape");
    general_mat_mul(1.0, &dz_flat.t(), &hm_flat, 1.0, &mut grads.u);
    general_mat_mul(1.0, &dz_flat.t(), &x_flat, 1.0, &mut grads.w);
    grads.b += &dz_flat.sum_axis(Axis(0));

    want_input_grad.then(|| {
        let mut dx = Array2::zeros((steps * batch, params.inputs()));
        general_mat_mul(1.0, &dz_flat, &params.w, 0.0, &mut dx);
        dx.into_shape_with_order((steps, batch, params.inputs()))
            .expect("dx reshape")
    })
}
