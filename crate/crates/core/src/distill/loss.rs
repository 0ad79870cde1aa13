//! The distillation objective: cross-entropy against a soft target.

use crate::error::{Error, Result};
use crate::label_codec::DenseDistribution;

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    logits.iter().map(|v| v - lse).collect()
}

/// `−Σ_c t_c · log softmax(z)_c`, via log-sum-exp.
pub fn distill_loss(logits: &[f64], target: &DenseDistribution) -> Result<f64> {
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteLogits);
    }
    if logits.len() != target.num_classes() {
        return Err(Error::InputShapeMismatch(format!(
            "{} logits for {} classes",
            logits.len(),
            target.num_classes()
        )));
    }
    Ok(cross_entropy(logits, target.probs()).0)
}

/// Loss and its gradient with respect to the logits.
pub(crate) fn cross_entropy(logits: &[f64], target: &[f64]) -> (f64, Vec<f64>) {
    let ls = log_softmax(logits);
    let mass: f64 = target.iter().sum();
    let loss = -target.iter().zip(&ls).map(|(t, l)| if *t == 0.0 { 0.0 } else { t * l }).sum::<f64>();
    let grad = ls.iter().zip(target).map(|(l, t)| mass * l.exp() - t).collect();
    (loss, grad)
}

/// Mean loss over a batch of `N×C` logits and its gradient. With
/// `hard = Some((targets, w))` a second cross-entropy term weighted by `w`
/// is added.
pub(crate) fn batch_loss(
    logits: &[f64],
    targets: &[Vec<f64>],
    hard: Option<(&[Vec<f64>], f64)>,
) -> Result<(f64, Vec<f64>)> {
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteLogits);
    }
    let n = targets.len();
    let c = logits.len() / n;
    let mut total = 0.0;
    let mut grad = vec![0.0; logits.len()];
    for (i, t) in targets.iter().enumerate() {
        let z = &logits[i * c..(i + 1) * c];
        let (l, g) = cross_entropy(z, t);
        total += l;
        grad[i * c..(i + 1) * c].iter_mut().zip(&g).for_each(|(a, b)| *a = b / n as f64);
        if let Some((hard, w)) = hard {
            let (l, g) = cross_entropy(z, &hard[i]);
            total += w * l;
            grad[i * c..(i + 1) * c]
                .iter_mut()
                .zip(&g)
                .for_each(|(a, b)| *a += w * b / n as f64);
        }
    }
    Ok((total / n as f64, grad))
}
