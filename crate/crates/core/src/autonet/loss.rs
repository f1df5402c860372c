use ndarray::{Array2, ArrayView2, Axis};

use crate::error::{Error, Result};

/// Row-wise softmax, shifted by the row maximum.
pub fn softmax(logits: ArrayView2<f64>) -> Array2<f64> {
    let mut out = logits.to_owned();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    out
}

/// Mean softmax cross-entropy over the batch and its gradient with respect to
/// the logits. `labels` are zero-based class indices.
pub fn cross_entropy(logits: ArrayView2<f64>, labels: &[usize]) -> Result<(f64, Array2<f64>)> {
    let (n, k) = logits.dim();
    if labels.len() != n {
        return Err(Error::Argument(format!(
            "{} labels for {n} rows of logits",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::Argument(format!(
            "class index {bad} out of range for {k} classes"
        )));
    }
    if n == 0 {
        return Ok((0.0, Array2::zeros((0, k))));
    }
    let mut grad = softmax(logits);
    let mut loss = 0.0;
    for (i, &label) in labels.iter().enumerate() {
        let row = logits.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - row[label];
        grad[[i, label]] -= 1.0;
    }
    grad /= n as f64;
    Ok((loss / n as f64, grad))
}

/// Mean squared error over a `(batch, 1)` prediction column and its gradient.
pub fn mse(pred: ArrayView2<f64>, targets: &[f64]) -> Result<(f64, Array2<f64>)> {
    let (n, k) = pred.dim();
    if k != 1 || targets.len() != n {
        return Err(Error::Argument(format!(
            "mse expects ({}, 1) predictions, got ({n}, {k})",
            targets.len()
        )));
    }
    if n == 0 {
        return Ok((0.0, Array2::zeros((0, 1))));
    }
    let mut grad = Array2::zeros((n, 1));
    let mut loss = 0.0;
    for (i, &t) in targets.iter().enumerate() {
        let r = pred[[i, 0]] - t;
        loss += r * r;
        grad[[i, 0]] = 2.0 * r / n as f64;
    }
    Ok((loss / n as f64, grad))
}
