//! Weight initialization.
//!
//! Kaiming-style uniform fan-in scaling, drawn from a caller-supplied
//! RNG so model construction is reproducible from a single seed.

use ndarray::{ArrayD, IxDyn};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Uniform draw in `[-bound, bound]`.
fn uniform(rng: &mut ChaCha8Rng, bound: f64) -> f64 {
    rng.random::<f64>() * 2.0 * bound - bound
}

/// Kaiming uniform tensor with `bound = sqrt(6 / fan_in)`.
pub fn kaiming_uniform(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> ArrayD<f64> {
    assert!(fan_in > 0, "fan_in must be positive");
    let bound = (6.0 / fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| uniform(rng, bound)).collect();
    ArrayD::from_shape_vec(IxDyn(shape), data).expect("shape/product agreement")
}

/// Bias vector drawn uniformly from `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
pub fn bias_uniform(rng: &mut ChaCha8Rng, len: usize, fan_in: usize) -> ArrayD<f64> {
    assert!(fan_in > 0, "fan_in must be positive");
    let bound = 1.0 / (fan_in as f64).sqrt();
    let data: Vec<f64> = (0..len).map(|_| uniform(rng, bound)).collect();
    ArrayD::from_shape_vec(IxDyn(&[len]), data).expect("shape/product agreement")
}

/// All-zero tensor, for gates and residual-path initializations.
pub fn zeros(shape: &[usize]) -> ArrayD<f64> {
    ArrayD::zeros(IxDyn(shape))
}
