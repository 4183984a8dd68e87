//! Weight initializers.

use ndarray::{Array2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;

/// Glorot/Xavier uniform for a `fan_out x fan_in` matrix.
pub fn glorot_uniform<R: Rng>(fan_out: usize, fan_in: usize, rng: &mut R) -> Array2<f64> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Array2::from_shape_simple_fn((fan_out, fan_in), || rng.random_range(-limit..=limit))
}

/// Matrix with orthonormal columns (`rows >= cols`) or rows (`rows < cols`),
/// via modified Gram-Schmidt on a Gaussian draw.
pub fn orthogonal<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    if rows < cols {
        return orthogonal(cols, rows, rng)
            .reversed_axes()
            .as_standard_layout()
            .to_owned();
    }
    let mut m = Array2::from_shape_simple_fn((rows, cols), || rng.sample::<f64, _>(StandardNormal));
    for j in 0..cols {
        for k in 0..j {
            let (done, mut rest) = m.view_mut().split_at(Axis(1), j);
            let qk = done.column(k);
            let mut cj = rest.column_mut(0);
            let proj = qk.dot(&cj);
            cj.scaled_add(-proj, &qk);
        }
        let norm = m.column(j).dot(&m.column(j)).sqrt();
        m.column_mut(j).mapv_inplace(|v| v / norm);
    }
    m
}
