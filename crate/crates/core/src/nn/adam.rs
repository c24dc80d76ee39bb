//! Adam optimizer with per-parameter moment state keyed by name.

use std::collections::HashMap;

use ndarray::ArrayD;

use super::ParamSet;

#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: HashMap<String, ArrayD<f64>>,
    v: HashMap<String, ArrayD<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: HashMap::new(),
            v: HashMap::new(),
        }
    }

    /// Applies one update from the gradients currently accumulated in
    /// the model. Gradients are not cleared; callers zero them at the
    /// start of the next step.
    pub fn step<M: ParamSet + ?Sized>(&mut self, model: &mut M) {
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - self.beta1.powf(t);
        let bc2 = 1.0 - self.beta2.powf(t);
        let (lr, b1, b2, eps) = (self.lr, self.beta1, self.beta2, self.eps);
        let (ms, vs) = (&mut self.m, &mut self.v);
        model.visit_params("", &mut |name, p| {
            let m = ms
                .entry(name.to_string())
                .or_insert_with(|| ArrayD::zeros(p.value.raw_dim()));
            let v = vs
                .entry(name.to_string())
                .or_insert_with(|| ArrayD::zeros(p.value.raw_dim()));
            assert_eq!(m.shape(), p.value.shape(), "optimizer state for {name}");
            ndarray::Zip::from(&mut p.value)
                .and(&p.grad)
                .and(m)
                .and(v)
                .for_each(|w, &g, m, v| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    let mhat = *m / bc1;
                    let vhat = *v / bc2;
                    *w -= lr * mhat / (vhat.sqrt() + eps);
                });
        });
    }
}
