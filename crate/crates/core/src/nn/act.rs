//! Elementwise nonlinearities and the softmax family.

use ndarray::{Array, Array1, ArrayView1, Dimension};

pub fn relu<D: Dimension>(x: &Array<f64, D>) -> Array<f64, D> {
    x.mapv(|v| if v > 0.0 { v } else { 0.0 })
}

pub fn relu_backward<D: Dimension>(x: &Array<f64, D>, dy: &Array<f64, D>) -> Array<f64, D> {
    let mut dx = dy.clone();
    dx.zip_mut_with(x, |g, &v| {
        if v <= 0.0 {
            *g = 0.0;
        }
    });
    dx
}

pub fn sigmoid<D: Dimension>(x: &Array<f64, D>) -> Array<f64, D> {
    x.mapv(|v| 1.0 / (1.0 + (-v).exp()))
}

/// Backward through sigmoid, expressed with the forward output `y`.
pub fn sigmoid_backward<D: Dimension>(y: &Array<f64, D>, dy: &Array<f64, D>) -> Array<f64, D> {
    let mut dx = dy.clone();
    dx.zip_mut_with(y, |g, &s| *g *= s * (1.0 - s));
    dx
}

pub fn tanh<D: Dimension>(x: &Array<f64, D>) -> Array<f64, D> {
    x.mapv(f64::tanh)
}

/// Backward through tanh, expressed with the forward output `y`.
pub fn tanh_backward<D: Dimension>(y: &Array<f64, D>, dy: &Array<f64, D>) -> Array<f64, D> {
    let mut dx = dy.clone();
    dx.zip_mut_with(y, |g, &t| *g *= 1.0 - t * t);
    dx
}

/// Numerically stable softmax.
pub fn softmax(logits: &ArrayView1<f64>) -> Array1<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps = logits.mapv(|v| (v - max).exp());
    let sum: f64 = exps.sum();
    exps / sum
}

pub fn log_softmax(logits: &ArrayView1<f64>) -> Array1<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = logits.mapv(|v| (v - max).exp()).sum().ln() + max;
    logits.mapv(|v| v - lse)
}

/// Cross-entropy loss against an integer label; returns the loss and
/// the gradient with respect to the logits.
pub fn cross_entropy(logits: &ArrayView1<f64>, label: usize) -> (f64, Array1<f64>) {
    assert!(label < logits.len(), "label {label} out of range");
    let logp = log_softmax(logits);
    let loss = -logp[label];
    let mut dlogits = logp.mapv(f64::exp);
    dlogits[label] -= 1.0;
    (loss, dlogits)
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax_tie_lowest(values: &ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}
