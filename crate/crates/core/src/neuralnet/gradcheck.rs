//! Central finite-difference gradient verification.

use super::params::ParamSet;

/// Denominator floor in the relative error, so that parameters whose true
/// gradient is zero compare on absolute error.
pub const REL_ERROR_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub worst_index: usize,
    pub checked: usize,
}

/// `(L(θ + δ e_i) - L(θ - δ e_i)) / 2δ` for every flat parameter `i`.
/// `params` is restored before returning.
pub fn numeric_gradient<P, F>(params: &mut P, delta: f64, loss: F) -> Vec<f64>
where
    P: ParamSet,
    F: Fn(&P) -> f64,
{
    let base = params.flatten();
    let mut probe = base.clone();
    let mut out = Vec::with_capacity(base.len());
    for i in 0..base.len() {
        probe[i] = base[i] + delta;
        params.assign_flat(&probe);
        let plus = loss(params);
        probe[i] = base[i] - delta;
        params.assign_flat(&probe);
        let minus = loss(params);
        probe[i] = base[i];
        out.push((plus - minus) / (2.0 * delta));
    }
    params.assign_flat(&base);
    out
}

pub fn check_gradients(analytic: &[f64], numeric: &[f64]) -> GradCheckReport {
    assert_eq!(analytic.len(), numeric.len(), "gradient lengths");
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        worst_index: 0,
        checked: analytic.len(),
    };
    for (i, (a, n)) in analytic.iter().zip(numeric).enumerate() {
        let abs = (a - n).abs();
        let rel = abs / a.abs().max(n.abs()).max(REL_ERROR_FLOOR);
        report.max_abs_error = report.max_abs_error.max(abs);
        if rel > report.max_rel_error || rel.is_nan() {
            report.max_rel_error = rel;
            report.worst_index = i;
        }
    }
    report
}
