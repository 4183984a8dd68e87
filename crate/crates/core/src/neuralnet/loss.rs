//! Masked regression losses. Only elements with mask 1 count; the mean is
//! over those elements.

use ndarray::{Array2, ArrayView2, Zip};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Mae,
    Mse,
}

/// Loss value and gradient with respect to the predictions.
#[derive(Debug, Clone)]
pub struct LossOutput {
    pub value: f64,
    pub grad: Array2<f64>,
    pub count: usize,
}

/// Returns `None` when every element is masked (the batch should be skipped).
pub fn masked_loss(
    kind: LossKind,
    pred: ArrayView2<'_, f64>,
    target: ArrayView2<'_, f64>,
    mask: ArrayView2<'_, f64>,
) -> Option<LossOutput> {
    assert_eq!(pred.dim(), target.dim(), "prediction/target shape");
    assert_eq!(pred.dim(), mask.dim(), "prediction/mask shape");
    let count = mask.iter().filter(|&&m| m != 0.0).count();
    if count == 0 {
        return None;
    }
    let n = count as f64;
    let mut grad = Array2::zeros(pred.dim());
    let mut total = 0.0;
    Zip::from(&mut grad)
        .and(pred)
        .and(target)
        .and(mask)
        .for_each(|g, &p, &t, &m| {
            if m == 0.0 {
                return;
            }
            let r = p - t;
            match kind {
                LossKind::Mae => {
                    total += r.abs();
                    *g = if r > 0.0 {
                        1.0 / n
                    } else if r < 0.0 {
                        -1.0 / n
                    } else {
                        0.0
                    };
                }
                LossKind::Mse => {
                    total += r * r;
                    *g = 2.0 * r / n;
                }
            }
        });
    Some(LossOutput {
        value: total / n,
        grad,
        count,
    })
}

pub fn masked_mae(
    pred: ArrayView2<'_, f64>,
    target: ArrayView2<'_, f64>,
    mask: ArrayView2<'_, f64>,
) -> Option<LossOutput> {
    masked_loss(LossKind::Mae, pred, target, mask)
}

pub fn masked_mse(
    pred: ArrayView2<'_, f64>,
    target: ArrayView2<'_, f64>,
    mask: ArrayView2<'_, f64>,
) -> Option<LossOutput> {
    masked_loss(LossKind::Mse, pred, target, mask)
}
