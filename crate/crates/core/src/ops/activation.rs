//! ReLU, softmax and cross-entropy.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub fn relu_forward(input: &Tensor) -> Tensor {
    input.map(|v| v.max(0.0))
}

/// Passes `grad_out` where `input > 0`; the gradient at exactly zero is zero.
pub fn relu_backward(input: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    input.zip_with(grad_out, |x, g| if x > 0.0 { g } else { 0.0 })
}

/// Guided-backpropagation gate: keeps the gradient only where the forward
/// input and the incoming gradient are both positive.
pub fn relu_backward_guided(input: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    input.zip_with(grad_out, |x, g| if x > 0.0 && g > 0.0 { g } else { 0.0 })
}

fn check_logits(logits: &Tensor, op: &'static str) -> Result<(usize, usize)> {
    if logits.rank() != 2 {
        return Err(Error::shape(op, format!("expected (batch, classes), got {:?}", logits.shape())));
    }
    let (b, k) = (logits.shape()[0], logits.shape()[1]);
    if k < 2 {
        return Err(Error::shape(op, format!("need at least 2 classes, got {k}")));
    }
    Ok((b, k))
}

/// Row-wise softmax with max subtraction.
pub fn softmax(logits: &Tensor) -> Result<Tensor> {
    let (_, k) = check_logits(logits, "softmax")?;
    logits.check_finite("softmax logits")?;
    let mut out = logits.data().to_vec();
    for row in out.chunks_mut(k) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            z += *v;
        }
        for v in row.iter_mut() {
            *v /= z;
        }
    }
    Ok(Tensor::from_parts(logits.shape().to_vec(), out))
}

fn check_labels(labels: &[usize], b: usize, k: usize) -> Result<()> {
    if labels.len() != b {
        return Err(Error::mismatch("cross_entropy", "batch", b, labels.len()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::LabelOutOfRange {
            context: "cross_entropy",
            label: bad,
            classes: k,
        });
    }
    Ok(())
}

/// Mean negative log-probability of the true class, and its gradient with
/// respect to the logits that produced `probs` (`(p − onehot) / batch`).
pub fn cross_entropy(probs: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let (b, k) = check_logits(probs, "cross_entropy")?;
    check_labels(labels, b, k)?;
    let p = probs.data();
    let loss = labels
        .iter()
        .enumerate()
        .map(|(i, &l)| -p[i * k + l].ln())
        .sum::<f64>()
        / b as f64;
    if !loss.is_finite() {
        return Err(Error::NonFinite {
            context: "cross_entropy loss".into(),
        });
    }
    Ok((loss, onehot_gradient(p, labels, b, k)))
}

fn onehot_gradient(p: &[f64], labels: &[usize], b: usize, k: usize) -> Tensor {
    let mut g = p.to_vec();
    for (i, &l) in labels.iter().enumerate() {
        g[i * k + l] -= 1.0;
    }
    for v in g.iter_mut() {
        *v /= b as f64;
    }
    Tensor::from_parts(vec![b, k], g)
}

/// Loss, probabilities and logit gradient in one pass; the loss uses
/// log-sum-exp so saturated probabilities stay finite.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor, Tensor)> {
    let (b, k) = check_logits(logits, "cross_entropy")?;
    check_labels(labels, b, k)?;
    let probs = softmax(logits)?;
    let x = logits.data();
    let mut loss = 0.0;
    for (i, &l) in labels.iter().enumerate() {
        let row = &x[i * k..(i + 1) * k];
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        loss += lse - row[l];
    }
    loss /= b as f64;
    if !loss.is_finite() {
        return Err(Error::NonFinite {
            context: "cross_entropy loss".into(),
        });
    }
    let grad = onehot_gradient(probs.data(), labels, b, k);
    Ok((loss, probs, grad))
}
