//! Minimal deterministic neural-network substrate.
//!
//! Everything runs in `f64` on single images (no batch axis); batching
//! is a loop plus gradient averaging at the call site. Layers own their
//! parameters and accumulate gradients in place. A named visitor walks
//! every parameter, which is all the optimizer and the checkpoint code
//! need to know about a model.

pub mod act;
pub mod adam;
pub mod attention;
pub mod conv;
pub mod init;
pub mod linear;
pub mod norm;

use std::collections::BTreeMap;

use ndarray::ArrayD;

use crate::error::{Error, Result};

/// A trainable tensor and its gradient accumulator.
#[derive(Debug, Clone)]
pub struct Param {
    pub value: ArrayD<f64>,
    pub grad: ArrayD<f64>,
}

impl Param {
    pub fn new(value: ArrayD<f64>) -> Self {
        let grad = ArrayD::zeros(value.raw_dim());
        Param { value, grad }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

/// Walks every parameter of a model under a dotted path name.
pub trait ParamSet {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param));
}

/// Joins a visitation prefix with a field name.
pub fn join_name(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Clears the gradient of every parameter.
pub fn zero_grads<M: ParamSet + ?Sized>(model: &mut M) {
    model.visit_params("", &mut |_, p| p.zero_grad());
}

/// Scales every accumulated gradient, e.g. by `1 / batch_size`.
pub fn scale_grads<M: ParamSet + ?Sized>(model: &mut M, factor: f64) {
    model.visit_params("", &mut |_, p| {
        p.grad.mapv_inplace(|g| g * factor);
    });
}

/// Total number of scalar parameters.
pub fn param_count<M: ParamSet + ?Sized>(model: &mut M) -> usize {
    let mut n = 0;
    model.visit_params("", &mut |_, p| n += p.len());
    n
}

/// Snapshot of all parameter values keyed by path, for checkpoints.
pub fn export_params<M: ParamSet + ?Sized>(model: &mut M) -> BTreeMap<String, ArrayD<f64>> {
    let mut out = BTreeMap::new();
    model.visit_params("", &mut |name, p| {
        out.insert(name.to_string(), p.value.clone());
    });
    out
}

/// Restores parameter values from a snapshot. Every parameter of the
/// model must be present with a matching shape, and no extra entries
/// may remain.
pub fn import_params<M: ParamSet + ?Sized>(
    model: &mut M,
    mut values: BTreeMap<String, ArrayD<f64>>,
) -> Result<()> {
    let mut missing = Vec::new();
    let mut mismatched = Vec::new();
    model.visit_params("", &mut |name, p| match values.remove(name) {
        Some(v) if v.shape() == p.value.shape() => p.value = v,
        Some(v) => mismatched.push(format!(
            "{name}: expected {:?}, found {:?}",
            p.value.shape(),
            v.shape()
        )),
        None => missing.push(name.to_string()),
    });
    if !missing.is_empty() || !mismatched.is_empty() || !values.is_empty() {
        let extra: Vec<String> = values.into_keys().collect();
        return Err(Error::data(format!(
            "parameter snapshot mismatch; missing {missing:?}, shape conflicts {mismatched:?}, unknown {extra:?}"
        )));
    }
    Ok(())
}
