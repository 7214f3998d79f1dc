use super::OpError;
use crate::scalar::Scalar;

/// Added inside the log so a confident wrong prediction yields a finite loss.
pub const CE_EPSILON: f64 = 1e-12;

/// Numerically stable softmax (the maximum logit is subtracted first).
pub fn softmax<T: Scalar>(logits: &[T]) -> Result<Vec<T>, OpError> {
    let max = logits
        .iter()
        .copied()
        .reduce(T::max)
        .ok_or(OpError::EmptyLogits)?;
    let mut out: Vec<T> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum = out.iter().fold(T::zero(), |acc, &v| acc + v);
    for v in &mut out {
        *v /= sum;
    }
    Ok(out)
}

/// `−ln(probs[target] + ε)`, floored at zero.
pub fn cross_entropy<T: Scalar>(probs: &[T], target: usize) -> Result<T, OpError> {
    let p = *probs.get(target).ok_or(OpError::ClassOutOfRange {
        index: target,
        classes: probs.len(),
    })?;
    let loss = -(p + T::from_f64_lossy(CE_EPSILON)).ln();
    // NaN passes through so callers can detect divergence.
    Ok(if loss < T::zero() { T::zero() } else { loss })
}

/// Gradient of the softmax cross-entropy with respect to the logits: `probs − one_hot(target)`.
pub fn cross_entropy_grad<T: Scalar>(probs: &[T], target: usize) -> Result<Vec<T>, OpError> {
    if target >= probs.len() {
        return Err(OpError::ClassOutOfRange {
            index: target,
            classes: probs.len(),
        });
    }
    let mut g = probs.to_vec();
    g[target] -= T::one();
    Ok(g)
}
