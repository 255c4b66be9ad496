//! Detection and classification losses.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::nn::ops::{self, bce_term};
use crate::nn::{Graph, Var};

/// Summed binary cross-entropy over frames; targets may be soft.
pub fn frame_bce(pred: &[f64], target: &[f64]) -> f64 {
    assert_eq!(pred.len(), target.len(), "frame_bce: length mismatch");
    pred.iter().zip(target).map(|(&p, &t)| bce_term(p, t)).sum()
}

/// Binary cross-entropy of one clip-level probability.
pub fn clip_bce(pred: f64, target: f64) -> f64 {
    bce_term(pred, target)
}

/// Batch loss for frame supervision: per-clip [`frame_bce`] averaged over
/// the batch. `probs` is `[N, T]`.
pub fn frame_bce_loss(g: &mut Graph, probs: Var, targets: &Array2<f64>) -> Var {
    let n = targets.nrows().max(1) as f64;
    let terms = ops::bce(g, probs, &targets.clone().into_dyn());
    let total = ops::sum_all(g, terms);
    ops::scale(g, total, 1.0 / n)
}

/// Batch loss for clip supervision: mean [`clip_bce`]. `probs` is `[N]`.
pub fn clip_bce_loss(g: &mut Graph, probs: Var, targets: &[f64]) -> Var {
    let t = Array1::from(targets.to_vec()).into_dyn();
    let terms = ops::bce(g, probs, &t);
    ops::mean_all(g, terms)
}

/// Mean softmax cross-entropy of the reference classification head.
pub fn classification_loss(g: &mut Graph, logits: Var, labels: &[usize]) -> Var {
    let terms = ops::softmax_cross_entropy(g, logits, labels);
    ops::mean_all(g, terms)
}

/// Joint objective: detection plus classification.
pub fn total_loss(g: &mut Graph, l_sed: Var, l_cls: Var) -> Var {
    ops::add(g, l_sed, l_cls)
}

/// Loss values of one optimisation step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_sed: f64,
    /// Present only in the joint stage.
    pub l_cls: Option<f64>,
    pub l_total: f64,
}

impl LossBreakdown {
    pub fn sed_only(l_sed: f64) -> Self {
        Self {
            l_sed,
            l_cls: None,
            l_total: l_sed,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.l_sed.is_finite() && self.l_total.is_finite() && self.l_cls.is_none_or(f64::is_finite)
    }
}
