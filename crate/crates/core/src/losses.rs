//! Masked reconstruction loss, genuine-only aggregation (GAR), cross-entropy
//! and the blended objective.

use crate::autodiff::{Graph, Tensor, Var};
use crate::data::Label;
use crate::error::{Error, Result};
use crate::patch::MaskPartition;

/// Default weight of the GAR term.
pub const DEFAULT_ALPHA: f64 = 0.01;

/// Scalar values of one objective evaluation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBundle {
    pub l_ce: f64,
    pub l_gar: f64,
    pub l_total: f64,
    pub alpha: f64,
}

/// Mean of `(pred - target)^2` over the masked rows only. `target` holds all
/// `n` rows; visible rows of both inputs are never read. Returns a constant
/// 0 when nothing is masked.
pub fn recon_loss_per_sample(
    g: &mut Graph,
    pred: Var,
    target: &Tensor,
    part: &MaskPartition,
) -> Result<Var> {
    let ps = g.shape(pred);
    if ps != target.shape() || ps.len() != 2 || ps[0] != part.total() {
        return Err(Error::shape(
            "recon_loss",
            format!(
                "pred {ps:?}, target {:?}, {} patches",
                target.shape(),
                part.total()
            ),
        ));
    }
    if part.masked.is_empty() {
        return g.constant(Tensor::scalar(0.0));
    }
    let p = g.gather(pred, &part.masked)?;
    let t = g.constant(target.select_rows(&part.masked)?)?;
    g.mse(p, t)
}

/// Mean of the genuine samples' reconstruction losses. Spoofed samples do not
/// enter the graph; a batch with no genuine sample gives a constant 0.
pub fn gar_loss(g: &mut Graph, per_sample: &[Var], labels: &[Label]) -> Result<Var> {
    if per_sample.len() != labels.len() {
        return Err(Error::shape(
            "gar_loss",
            format!("{} losses for {} labels", per_sample.len(), labels.len()),
        ));
    }
    let genuine: Vec<Var> = per_sample
        .iter()
        .zip(labels)
        .filter(|(_, l)| l.is_genuine())
        .map(|(v, _)| *v)
        .collect();
    let Some((&first, rest)) = genuine.split_first() else {
        return g.constant(Tensor::scalar(0.0));
    };
    let mut sum = first;
    for &v in rest {
        sum = g.add(sum, v)?;
    }
    g.scale(sum, 1.0 / genuine.len() as f64)
}

/// Batch-mean cross-entropy of `[B, 2]` logits, class 1 genuine.
pub fn ce_loss(
    g: &mut Graph,
    logits: Var,
    labels: &[Label],
    class_weights: Option<[f64; 2]>,
) -> Result<Var> {
    let idx: Vec<usize> = labels.iter().map(|l| l.index()).collect();
    g.cross_entropy(logits, &idx, class_weights.as_ref().map(|w| &w[..]))
}

/// `l_ce + alpha * l_gar`.
pub fn total_loss(g: &mut Graph, l_ce: Var, l_gar: Var, alpha: f64) -> Result<Var> {
    if !(alpha >= 0.0) || !alpha.is_finite() {
        return Err(Error::invalid(format!(
            "alpha {alpha} must be finite and non-negative"
        )));
    }
    let weighted = g.scale(l_gar, alpha)?;
    g.add(l_ce, weighted)
}

impl LossBundle {
    pub fn read(g: &Graph, l_ce: Var, l_gar: Var, l_total: Var, alpha: f64) -> Self {
        Self {
            l_ce: g.value(l_ce).item(),
            l_gar: g.value(l_gar).item(),
            l_total: g.value(l_total).item(),
            alpha,
        }
    }
}
