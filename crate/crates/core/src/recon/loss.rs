//! Reconstruction objective: a pixel term blended with a structural
//! term, summed over the glimpse sequence.
//!
//! The blend weight ramps linearly from zero to its final value over
//! the first half of training and stays constant afterwards, so early
//! epochs optimize plain pixel error and later epochs emphasize
//! structure. For a fixed pair of images the loss is affine in the
//! blend weight.

use serde::{Deserialize, Serialize};

use super::ssim::ssim_with_grad;
use crate::error::{Error, Result};
use crate::img::Image;

/// Mean squared error and its gradient with respect to `a`.
pub fn mse_with_grad(a: &Image, b: &Image) -> Result<(f64, Image)> {
    if a.dim() != b.dim() {
        return Err(Error::bounds(format!(
            "loss operands differ in shape: {:?} vs {:?}",
            a.dim(),
            b.dim()
        )));
    }
    let n = a.len() as f64;
    let diff = a - b;
    let loss = diff.mapv(|d| d * d).sum() / n;
    let grad = diff.mapv(|d| 2.0 * d / n);
    Ok((loss, grad))
}

/// Per-step breakdown of the hybrid objective.
#[derive(Debug, Clone, Serialize)]
pub struct HybridTerms {
    pub total: f64,
    pub mse: Vec<f64>,
    pub ssim: Vec<f64>,
}

/// `sum_t [(1 - lambda) * mse(g_t, target) + lambda * (1 - ssim(g_t, target))]`
/// with the gradient for each step's reconstruction.
pub fn hybrid_loss(
    recons: &[Image],
    target: &Image,
    lambda: f64,
) -> Result<(HybridTerms, Vec<Image>)> {
    if recons.is_empty() {
        return Err(Error::config("hybrid loss needs at least one reconstruction"));
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::config(format!(
            "blend weight must lie in [0, 1], got {lambda}"
        )));
    }
    let mut terms = HybridTerms {
        total: 0.0,
        mse: Vec::with_capacity(recons.len()),
        ssim: Vec::with_capacity(recons.len()),
    };
    let mut grads = Vec::with_capacity(recons.len());
    for g in recons {
        let (m, dm) = mse_with_grad(g, target)?;
        let (s, ds) = ssim_with_grad(g, target)?;
        terms.total += (1.0 - lambda) * m + lambda * (1.0 - s);
        terms.mse.push(m);
        terms.ssim.push(s);
        grads.push(dm.mapv(|v| v * (1.0 - lambda)) - ds.mapv(|v| v * lambda));
    }
    Ok((terms, grads))
}

/// Linear warm-up schedule for the structural blend weight.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BlendSchedule {
    pub final_weight: f64,
    pub total_epochs: usize,
}

impl BlendSchedule {
    pub fn new(final_weight: f64, total_epochs: usize) -> Result<Self> {
        if !(0.0..=1.0).contains(&final_weight) {
            return Err(Error::config(format!(
                "final blend weight must lie in [0, 1], got {final_weight}"
            )));
        }
        if total_epochs == 0 {
            return Err(Error::config("schedule needs at least one epoch"));
        }
        Ok(BlendSchedule {
            final_weight,
            total_epochs,
        })
    }

    /// Weight for a zero-indexed epoch: ramps from 0 at the first epoch
    /// to the final value at the midpoint, constant afterwards.
    pub fn weight_at(&self, epoch: usize) -> f64 {
        let ramp = self.total_epochs.div_ceil(2);
        if ramp <= 1 {
            return self.final_weight;
        }
        let progress = (epoch as f64 / (ramp - 1) as f64).min(1.0);
        progress * self.final_weight
    }
}
