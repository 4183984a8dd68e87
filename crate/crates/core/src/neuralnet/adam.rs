use serde::{Deserialize, Serialize};

use super::params::ParamSet;

/// Adam with bias correction. Moment buffers follow the visiting order of the
/// parameter set they were created for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new<P: ParamSet + ?Sized>(params: &P, lr: f64) -> Self {
        let mut m = Vec::new();
        params.visit(&mut |_, t| m.push(vec![0.0; t.len()]));
        let v = m.clone();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m,
            v,
        }
    }

    pub fn step<P: ParamSet + ?Sized>(&mut self, params: &mut P, grads: &P) {
        let mut grad_slices: Vec<Vec<f64>> = Vec::with_capacity(self.m.len());
        grads.visit(&mut |_, g| grad_slices.push(g.to_vec()));
        assert_eq!(grad_slices.len(), self.m.len(), "gradient tensor count");

        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let bc1 = 1.0 - b1.powi(self.t as i32);
        let bc2 = 1.0 - b2.powi(self.t as i32);
        let (lr, eps) = (self.lr, self.eps);
        let mut k = 0;
        let (ms, vs) = (&mut self.m, &mut self.v);
        params.visit_mut(&mut |_, theta| {
            let (m, v, g) = (&mut ms[k], &mut vs[k], &grad_slices[k]);
            assert_eq!(theta.len(), g.len(), "gradient tensor length");
            for i in 0..theta.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                theta[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
            k += 1;
        });
    }
}
