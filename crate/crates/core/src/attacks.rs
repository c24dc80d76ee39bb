//! Bounded-perturbation attacks used to stress the defense.
//!
//! All attacks operate directly in `[0, 1]` pixel space under an
//! l-infinity budget; any model-specific normalization is the
//! classifier adapter's business. Iterates are projected back into the
//! intersection of the epsilon box around the original image and the
//! unit box after every step. Gradient attacks consume a
//! differentiable classifier; the black-box attack only needs a loss
//! oracle and reports exactly how many times it called it.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::classify::DifferentiableTarget;
use crate::error::{Error, Result};
use crate::img::Image;
use crate::nn::act::cross_entropy;
use crate::rng::substream;

/// Perturbation budget and step schedule shared by all attacks.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AttackSpec {
    pub epsilon: f64,
    pub alpha: f64,
    pub steps: usize,
}

impl AttackSpec {
    pub fn new(epsilon: f64, alpha: f64, steps: usize) -> Result<Self> {
        if !(0.0..=1.0).contains(&epsilon) {
            return Err(Error::config(format!(
                "epsilon must lie in [0, 1], got {epsilon}"
            )));
        }
        if !(0.0..=epsilon).contains(&alpha) {
            return Err(Error::config(format!(
                "step size must lie in [0, epsilon], got {alpha} with epsilon {epsilon}"
            )));
        }
        if steps == 0 {
            return Err(Error::config("attack needs at least one step"));
        }
        Ok(AttackSpec {
            epsilon,
            alpha,
            steps,
        })
    }
}

/// The produced adversarial image plus bookkeeping: oracle queries
/// made (black-box only) and gradient steps that saw an all-zero
/// gradient.
#[derive(Debug, Clone)]
pub struct AttackOutcome {
    pub image: Image,
    pub queries: u64,
    pub degenerate_steps: usize,
}

/// Projects onto the epsilon box around `origin` intersected with the
/// unit box.
pub fn project_linf(x: &Image, origin: &Image, epsilon: f64) -> Result<Image> {
    if x.dim() != origin.dim() {
        return Err(Error::bounds(format!(
            "projection operands differ in shape: {:?} vs {:?}",
            x.dim(),
            origin.dim()
        )));
    }
    let mut out = x.clone();
    out.zip_mut_with(origin, |v, &o| {
        *v = v.min(o + epsilon).max(o - epsilon).clamp(0.0, 1.0);
    });
    Ok(out)
}

/// Sign with a genuine zero: positive to 1, negative to -1, zero stays
/// zero so a vanished gradient moves nothing.
fn attack_sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Momentum iterative gradient attack. Each step folds the
/// l1-normalized gradient into a momentum buffer (decay 1.0 by
/// convention) and ascends its sign. A step whose gradient is exactly
/// zero skips the normalization, leaves the momentum to coast and is
/// counted as degenerate.
pub fn mi_fgsm(
    target: &mut dyn DifferentiableTarget,
    image: &Image,
    label: usize,
    spec: &AttackSpec,
    decay: f64,
) -> Result<AttackOutcome> {
    if decay < 0.0 {
        return Err(Error::config(format!(
            "momentum decay must be non-negative, got {decay}"
        )));
    }
    let mut x = image.clone();
    let mut momentum = Image::zeros(image.raw_dim());
    let mut degenerate = 0usize;
    for _ in 0..spec.steps {
        let (_, grad) = target.loss_input_grad(&x, label)?;
        let l1: f64 = grad.mapv(f64::abs).sum();
        momentum.mapv_inplace(|m| m * decay);
        if l1 > 0.0 {
            momentum.zip_mut_with(&grad, |m, &g| *m += g / l1);
        } else {
            degenerate += 1;
        }
        x.zip_mut_with(&momentum, |v, &m| *v += spec.alpha * attack_sign(m));
        x = project_linf(&x, image, spec.epsilon)?;
    }
    Ok(AttackOutcome {
        image: x,
        queries: 0,
        degenerate_steps: degenerate,
    })
}

/// Projected gradient descent with optional uniform random start
/// inside the epsilon box. With no random start, one step and a step
/// size equal to epsilon this is exactly the fast gradient sign
/// method.
pub fn pgd(
    target: &mut dyn DifferentiableTarget,
    image: &Image,
    label: usize,
    spec: &AttackSpec,
    random_start: bool,
    seed: u64,
) -> Result<AttackOutcome> {
    let mut x = image.clone();
    if random_start {
        let mut rng = substream(seed, 0x96, 0);
        x.mapv_inplace(|v| v + (rng.random::<f64>() * 2.0 - 1.0) * spec.epsilon);
        x = project_linf(&x, image, spec.epsilon)?;
    }
    let mut degenerate = 0usize;
    for _ in 0..spec.steps {
        let (_, grad) = target.loss_input_grad(&x, label)?;
        if grad.iter().all(|&g| g == 0.0) {
            degenerate += 1;
        }
        x.zip_mut_with(&grad, |v, &g| *v += spec.alpha * attack_sign(g));
        x = project_linf(&x, image, spec.epsilon)?;
    }
    Ok(AttackOutcome {
        image: x,
        queries: 0,
        degenerate_steps: degenerate,
    })
}

/// Black-box loss oracle: anything that can score an image. The
/// gradient-free attack maximizes this value.
pub trait LossOracle {
    fn loss(&mut self, image: &Image) -> Result<f64>;
}

impl<F> LossOracle for F
where
    F: FnMut(&Image) -> Result<f64>,
{
    fn loss(&mut self, image: &Image) -> Result<f64> {
        self(image)
    }
}

/// Cross-entropy oracle over a fixed label, for attacking classifiers
/// through their public scores only.
pub struct CrossEntropyOracle<'a, C: crate::classify::ClassifierAdapter + ?Sized> {
    pub classifier: &'a C,
    pub label: usize,
}

impl<C: crate::classify::ClassifierAdapter + ?Sized> LossOracle for CrossEntropyOracle<'_, C> {
    fn loss(&mut self, image: &Image) -> Result<f64> {
        let logits = self.classifier.logits(image)?;
        Ok(cross_entropy(&logits.view(), self.label).0)
    }
}

/// Gradient-free perturbation parameters: finite-difference radius and
/// the number of random direction pairs averaged per step.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct SpsaConfig {
    pub delta: f64,
    pub directions: usize,
}

impl Default for SpsaConfig {
    fn default() -> Self {
        SpsaConfig {
            delta: 0.01,
            directions: 128,
        }
    }
}

impl SpsaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.delta <= 0.0 {
            return Err(Error::config(format!(
                "finite-difference radius must be positive, got {}",
                self.delta
            )));
        }
        if self.directions == 0 {
            return Err(Error::config("need at least one probe direction"));
        }
        Ok(())
    }
}

/// Mean simultaneous-perturbation gradient estimate at `x`.
///
/// Averages `(loss(x + delta u) - loss(x - delta u)) / (2 delta) * u`
/// over `directions` random sign vectors drawn from `rng`. Probe
/// points are evaluated as-is, without projection. Returns the
/// estimate and the number of oracle queries, two per direction.
pub fn spsa_gradient(
    oracle: &mut dyn LossOracle,
    x: &Image,
    delta: f64,
    directions: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(Image, u64)> {
    let mut estimate = Image::zeros(x.raw_dim());
    let mut queries = 0u64;
    for _ in 0..directions {
        let u = Image::from_shape_simple_fn(x.raw_dim(), || {
            if rng.random::<bool>() {
                1.0
            } else {
                -1.0
            }
        });
        let plus = x + &u.mapv(|v| v * delta);
        let minus = x - &u.mapv(|v| v * delta);
        let lp = oracle.loss(&plus)?;
        let lm = oracle.loss(&minus)?;
        queries += 2;
        let coeff = (lp - lm) / (2.0 * delta);
        estimate.zip_mut_with(&u, |e, &ui| *e += coeff * ui);
    }
    estimate.mapv_inplace(|e| e / directions as f64);
    Ok((estimate, queries))
}

/// Simultaneous-perturbation gradient estimation with sign ascent.
///
/// Per step, the gradient estimate is the mean over random sign
/// vectors `u` of `(loss(x + delta u) - loss(x - delta u)) / (2 delta) * u`.
/// The oracle is queried exactly `2 * directions * steps` times, which
/// the outcome reports.
pub fn spsa(
    oracle: &mut dyn LossOracle,
    image: &Image,
    spec: &AttackSpec,
    cfg: &SpsaConfig,
    seed: u64,
) -> Result<AttackOutcome> {
    cfg.validate()?;
    let mut x = image.clone();
    let mut queries = 0u64;
    let mut degenerate = 0usize;
    for step in 0..spec.steps {
        let mut rng = substream(seed, 0x5A, step as u64);
        let (estimate, used) = spsa_gradient(oracle, &x, cfg.delta, cfg.directions, &mut rng)?;
        queries += used;
        if estimate.iter().all(|&e| e == 0.0) {
            degenerate += 1;
        }
        x.zip_mut_with(&estimate, |v, &e| *v += spec.alpha * attack_sign(e));
        x = project_linf(&x, image, spec.epsilon)?;
    }
    Ok(AttackOutcome {
        image: x,
        queries,
        degenerate_steps: degenerate,
    })
}
