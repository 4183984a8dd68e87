/// A fixed, ordered collection of named parameter tensors. Optimizers and
/// gradient checks only see the flat storage of each tensor.
pub trait ParamSet {
    fn visit(&self, f: &mut dyn FnMut(&str, &[f64]));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64]));

    fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, t| n += t.len());
        n
    }

    fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        self.visit(&mut |_, t| out.extend_from_slice(t));
        out
    }

    fn assign_flat(&mut self, flat: &[f64]) {
        let mut at = 0;
        self.visit_mut(&mut |_, t| {
            t.copy_from_slice(&flat[at..at + t.len()]);
            at += t.len();
        });
        assert_eq!(at, flat.len(), "flat parameter length");
    }

    fn shapes(&self) -> Vec<(String, usize)> {
        let mut out = Vec::new();
        self.visit(&mut |name, t| out.push((name.to_string(), t.len())));
        out
    }

    fn global_norm(&self) -> f64 {
        let mut sq = 0.0;
        self.visit(&mut |_, t| sq += t.iter().map(|v| v * v).sum::<f64>());
        sq.sqrt()
    }

    fn scale(&mut self, factor: f64) {
        self.visit_mut(&mut |_, t| t.iter_mut().for_each(|v| *v *= factor));
    }

    fn all_finite(&self) -> bool {
        let mut ok = true;
        self.visit(&mut |_, t| ok &= t.iter().all(|v| v.is_finite()));
        ok
    }
}

/// Contiguous storage of an owned ndarray.
pub(crate) fn slice_of<D: ndarray::Dimension>(a: &ndarray::Array<f64, D>) -> &[f64] {
    a.as_slice().expect("parameter tensors are contiguous")
}

pub(crate) fn slice_of_mut<D: ndarray::Dimension>(a: &mut ndarray::Array<f64, D>) -> &mut [f64] {
    a.as_slice_mut().expect("parameter tensors are contiguous")
}
