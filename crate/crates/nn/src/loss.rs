use crate::error::{NnError, Result};
use crate::network::sigmoid;
use crate::real::Real;
use crate::tensor::Tensor;

/// Predictions are clamped to `[BCE_EPSILON, 1 - BCE_EPSILON]` before the log.
pub const BCE_EPSILON: f64 = 1e-7;

/// Mean binary cross-entropy (natural log) over all elements, and its gradient
/// with respect to the (unclamped) predictions.
pub fn bce_loss<T: Real>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<(f64, Tensor<T>)> {
    if pred.shape() != target.shape() {
        return Err(NnError::shape("bce target", pred.shape(), target.shape()));
    }
    let n = pred.len() as f64;
    let mut loss = 0.0;
    let mut grad = Tensor::zeros(pred.shape());
    for ((g, &p), &y) in grad.data_mut().iter_mut().zip(pred.data()).zip(target.data()) {
        let p = p.as_f64().clamp(BCE_EPSILON, 1.0 - BCE_EPSILON);
        let y = y.as_f64();
        loss -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
        *g = T::lit((p - y) / (p * (1.0 - p)) / n);
    }
    Ok((loss / n, grad))
}

/// Binary cross-entropy of `sigmoid(logit)` against `target`, computed stably
/// from the logit. Returns `(loss, d loss / d logit)`.
#[inline]
pub fn bce_with_logits<T: Real>(logit: T, target: T) -> (f64, T) {
    let z = logit.as_f64();
    let y = target.as_f64();
    let loss = z.max(0.0) - z * y + (-z.abs()).exp().ln_1p();
    (loss, sigmoid(logit) - target)
}

/// `0.5 * sum (pred - target)^2` and its gradient `pred - target`.
pub fn sum_squared_error<T: Real>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<(f64, Tensor<T>)> {
    if pred.shape() != target.shape() {
        return Err(NnError::shape("squared-error target", pred.shape(), target.shape()));
    }
    let mut grad = Tensor::zeros(pred.shape());
    let mut loss = 0.0;
    for ((g, &p), &y) in grad.data_mut().iter_mut().zip(pred.data()).zip(target.data()) {
        let d = p - y;
        loss += 0.5 * d.as_f64() * d.as_f64();
        *g = d;
    }
    Ok((loss, grad))
}
