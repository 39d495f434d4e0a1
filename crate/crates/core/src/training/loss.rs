//! Focal loss on logits.
//!
//! With `s = z` for target 1 and `s = -z` for target 0, `p_t = σ(s)` and
//! `log p_t = -softplus(-s)`, so no exponential of a large argument is ever
//! taken.

use crate::graph::{Function, Graph, Value, Var};
use crate::ops::sigmoid_scalar;
use crate::tensor::Tensor;

use super::TrainError;

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Per-sample terms: returns `(loss, d loss / d logit)`.
fn focal_terms(logit: f64, target: u8, alpha: f64, gamma: f64) -> (f64, f64) {
    let (sign, alpha_t) = if target == 1 { (1.0, alpha) } else { (-1.0, 1.0 - alpha) };
    let s = sign * logit;
    let p_t = sigmoid_scalar(s);
    let q = sigmoid_scalar(-s);
    let log_p = -softplus(-s);
    let weight = if gamma == 0.0 { 1.0 } else { q.powf(gamma) };
    let loss = -alpha_t * weight * log_p;
    let d_s = alpha_t * weight * (gamma * p_t * log_p - q);
    (loss, sign * d_s)
}

/// Focal loss of a single logit.
pub fn focal_loss_scalar(logit: f64, target: u8, alpha: f64, gamma: f64) -> f64 {
    focal_terms(logit, target, alpha, gamma).0
}

struct FocalLoss {
    grads: Vec<f64>,
}

impl Function for FocalLoss {
    fn name(&self) -> &'static str {
        "focal_loss"
    }

    fn backward(&self, _: &[&Value], _: &Value, dy: &[f64], needs: &[bool]) -> Vec<Option<Vec<f64>>> {
        vec![needs[0].then(|| self.grads.iter().map(|g| g * dy[0]).collect())]
    }
}

fn check_targets(targets: &[u8]) -> Result<(), TrainError> {
    match targets.iter().position(|&t| t > 1) {
        Some(i) => Err(TrainError::NonBinaryTarget { index: i, value: targets[i] }),
        None => Ok(()),
    }
}

/// Mean focal loss over all logits.
pub fn focal_loss(g: &mut Graph, logits: Var, targets: &[u8], alpha: f64, gamma: f64) -> Result<Var, TrainError> {
    focal_loss_masked(g, logits, targets, None, alpha, gamma)
}

/// Focal loss averaged over the logits whose `mask` entry is true.
pub fn focal_loss_masked(
    g: &mut Graph,
    logits: Var,
    targets: &[u8],
    mask: Option<&[bool]>,
    alpha: f64,
    gamma: f64,
) -> Result<Var, TrainError> {
    let z = g.data(logits);
    if z.len() != targets.len() || mask.is_some_and(|m| m.len() != targets.len()) {
        return Err(TrainError::LengthMismatch {
            what: "focal loss targets",
            expected: z.len(),
            found: targets.len(),
        });
    }
    check_targets(targets)?;
    let active = |i: usize| mask.is_none_or(|m| m[i]);
    let count = (0..targets.len()).filter(|&i| active(i)).count();
    if count == 0 {
        return Err(TrainError::InvalidConfig("focal loss over an empty mask".into()));
    }
    let norm = 1.0 / count as f64;
    let mut total = 0.0;
    let mut grads = vec![0.0; z.len()];
    for (i, (&zi, &ti)) in z.iter().zip(targets).enumerate() {
        if active(i) {
            let (l, d) = focal_terms(zi, ti, alpha, gamma);
            total += l;
            grads[i] = d * norm;
        }
    }
    Ok(g.apply(Box::new(FocalLoss { grads }), &[logits], Tensor::scalar(total * norm)))
}
