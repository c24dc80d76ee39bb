//! Saccade control: where to look next.
//!
//! An advantage actor-critic agent reads the reconstructor's deepest
//! hidden state and picks the next fovea position. Already-visited
//! positions are invalidated by adding the log of a near-zero mask
//! factor to their logits, which keeps the distribution well defined
//! while making repeats astronomically unlikely. The first fixation of
//! every episode is uniform random and contributes no policy gradient.
//! Rewards come from the classifier's top score on the current
//! reconstruction: positive when the prediction is correct, negative
//! otherwise.

use ndarray::{Array1, Array3, ArrayView1};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::classify::ClassifierAdapter;
use crate::error::{Error, Result};
use crate::img::Image;
use crate::nn::act::{argmax_tie_lowest, relu, relu_backward, softmax};
use crate::nn::adam::Adam;
use crate::nn::conv::Conv2d;
use crate::nn::linear::Linear;
use crate::nn::{import_params, join_name, scale_grads, zero_grads, Param, ParamSet};
use crate::recon::ReconModel;
use crate::rng::substream;
use crate::sampling::{apply_mask, sample_mask, SampleConfig};

const CHECKPOINT_KIND: &str = "policy";

/// Mask factor for invalidated actions. Applied as an additive log
/// term, so invalid logits drop by about 18.4 instead of becoming
/// non-finite.
pub const MASK_EPS: f64 = 1e-8;

// ---------------------------------------------------------------------------
// Action masking and the pure policy math
// ---------------------------------------------------------------------------

/// Tracks which fovea positions are still selectable.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionMask {
    valid: Vec<bool>,
}

impl ActionMask {
    pub fn all_valid(n: usize) -> Self {
        ActionMask {
            valid: vec![true; n],
        }
    }

    pub fn len(&self) -> usize {
        self.valid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.valid.is_empty()
    }

    pub fn is_valid(&self, action: usize) -> bool {
        self.valid.get(action).copied().unwrap_or(false)
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    pub fn invalidate(&mut self, action: usize) -> Result<()> {
        if action >= self.valid.len() {
            return Err(Error::bounds(format!(
                "action {action} out of range for {} actions",
                self.valid.len()
            )));
        }
        self.valid[action] = false;
        Ok(())
    }

    /// Multiplicative mask factors: 1 for valid, `MASK_EPS` for
    /// invalid.
    pub fn factors(&self) -> Array1<f64> {
        self.valid
            .iter()
            .map(|&v| if v { 1.0 } else { MASK_EPS })
            .collect()
    }
}

/// Softmax over `logits + ln(mask factors)`. Errors when no action is
/// valid, because the result would no longer respect the mask at all.
pub fn masked_softmax(logits: &ArrayView1<f64>, mask: &ActionMask) -> Result<Array1<f64>> {
    masked_softmax_with_eps(logits, mask, MASK_EPS)
}

/// [`masked_softmax`] with a caller-chosen suppression factor, mainly
/// for studying how strongly invalid actions leak probability.
pub fn masked_softmax_with_eps(
    logits: &ArrayView1<f64>,
    mask: &ActionMask,
    mask_eps: f64,
) -> Result<Array1<f64>> {
    if !(mask_eps > 0.0 && mask_eps <= 1.0) {
        return Err(Error::config(format!(
            "mask factor must lie in (0, 1], got {mask_eps}"
        )));
    }
    if logits.len() != mask.len() {
        return Err(Error::bounds(format!(
            "{} logits for {} actions",
            logits.len(),
            mask.len()
        )));
    }
    if mask.valid_count() == 0 {
        return Err(Error::config("all actions are invalid"));
    }
    let shifted: Array1<f64> = logits
        .iter()
        .zip(mask.valid.iter())
        .map(|(&z, &v)| if v { z } else { z + mask_eps.ln() })
        .collect();
    Ok(softmax(&shifted.view()))
}

/// Samples an index from a probability vector by inverse CDF.
pub fn select_action(probs: &ArrayView1<f64>, rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Shannon entropy of a probability vector.
pub fn entropy(probs: &ArrayView1<f64>) -> f64 {
    probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.ln())
        .sum()
}

/// Classification-score reward: the top softmax score, positive if the
/// prediction matches the label and negative otherwise. Ties in the
/// top score resolve to the lowest class index.
pub fn compute_reward(class_probs: &ArrayView1<f64>, label: usize) -> f64 {
    let top = argmax_tie_lowest(class_probs);
    let score = class_probs[top];
    if top == label {
        score
    } else {
        -score
    }
}

/// One-step advantages `a_t = r_t + gamma * v_{t+1} - v_t`, with the
/// value beyond the final step defined as zero.
pub fn advantage(rewards: &[f64], values: &[f64], gamma: f64) -> Result<Vec<f64>> {
    if rewards.len() != values.len() {
        return Err(Error::bounds(format!(
            "{} rewards but {} values",
            rewards.len(),
            values.len()
        )));
    }
    Ok((0..rewards.len())
        .map(|t| {
            let next = if t + 1 < values.len() { values[t + 1] } else { 0.0 };
            rewards[t] + gamma * next - values[t]
        })
        .collect())
}

/// Bootstrap targets for the critic: `r_t + gamma * v_{t+1}` using the
/// values recorded during the rollout.
pub fn critic_targets(rewards: &[f64], values: &[f64], gamma: f64) -> Result<Vec<f64>> {
    if rewards.len() != values.len() {
        return Err(Error::bounds(format!(
            "{} rewards but {} values",
            rewards.len(),
            values.len()
        )));
    }
    Ok((0..rewards.len())
        .map(|t| {
            let next = if t + 1 < values.len() { values[t + 1] } else { 0.0 };
            rewards[t] + gamma * next
        })
        .collect())
}

/// Gradient with respect to the logits of `-log pi(action) * advantage`
/// under a (masked) softmax: `advantage * (pi - onehot(action))`.
pub fn actor_logit_grad(probs: &ArrayView1<f64>, action: usize, adv: f64) -> Array1<f64> {
    let mut d = probs.to_owned() * adv;
    d[action] -= adv;
    d
}

/// Gradient with respect to the logits of the negative entropy `-h`:
/// `pi_j * (log pi_j + h)`.
pub fn neg_entropy_logit_grad(probs: &ArrayView1<f64>) -> Array1<f64> {
    let h = entropy(probs);
    probs.mapv(|p| if p > 0.0 { p * (p.ln() + h) } else { 0.0 })
}

// ---------------------------------------------------------------------------
// Policy and value networks
// ---------------------------------------------------------------------------

/// Hyperparameters of the observation trunk shared by actor and
/// critic (each gets its own instance, there is no weight sharing).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AgentConfig {
    pub obs_channels: usize,
    pub obs_height: usize,
    pub obs_width: usize,
    pub trunk: usize,
    pub num_actions: usize,
    pub seed: u64,
}

impl AgentConfig {
    pub fn for_recon(recon: &ReconModel, trunk: usize, seed: u64) -> Self {
        let (c, h, w) = recon.observation_dim();
        AgentConfig {
            obs_channels: c,
            obs_height: h,
            obs_width: w,
            trunk,
            num_actions: recon.grid.num_actions(),
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.obs_channels == 0 || self.trunk == 0 || self.num_actions == 0 {
            return Err(Error::config("agent dimensions must be positive"));
        }
        if self.obs_height % 2 != 0 || self.obs_width % 2 != 0 {
            return Err(Error::config(format!(
                "observation {}x{} must be even for the strided trunk",
                self.obs_height, self.obs_width
            )));
        }
        Ok(())
    }
}

/// Small residual conv trunk with a linear head; the actor emits one
/// logit per fovea position, the critic a single value.
#[derive(Debug, Clone)]
struct ObsNet {
    conv1: Conv2d,
    res: Conv2d,
    down: Conv2d,
    fc: Linear,
}

struct ObsNetCache {
    x: Array3<f64>,
    p1: Array3<f64>,
    a1: Array3<f64>,
    s2: Array3<f64>,
    a2: Array3<f64>,
    p3: Array3<f64>,
    a3: Array3<f64>,
    flat: Array1<f64>,
}

impl ObsNet {
    fn new(rng: &mut ChaCha8Rng, cfg: &AgentConfig, out: usize) -> Self {
        let flat = cfg.trunk * (cfg.obs_height / 2) * (cfg.obs_width / 2);
        ObsNet {
            conv1: Conv2d::new(rng, cfg.obs_channels, cfg.trunk, 3, 1, 1),
            res: Conv2d::new(rng, cfg.trunk, cfg.trunk, 3, 1, 1),
            down: Conv2d::new(rng, cfg.trunk, cfg.trunk, 3, 2, 1),
            fc: Linear::new(rng, flat, out),
        }
    }

    fn forward_cached(&self, x: &Array3<f64>) -> (Array1<f64>, ObsNetCache) {
        let p1 = self.conv1.forward(&x.view());
        let a1 = relu(&p1);
        let s2 = &a1 + &self.res.forward(&a1.view());
        let a2 = relu(&s2);
        let p3 = self.down.forward(&a2.view());
        let a3 = relu(&p3);
        let flat = Array1::from_iter(a3.iter().cloned());
        let out = self.fc.forward(&flat.view());
        (
            out,
            ObsNetCache {
                x: x.clone(),
                p1,
                a1,
                s2,
                a2,
                p3,
                a3,
                flat,
            },
        )
    }

    fn forward(&self, x: &Array3<f64>) -> Array1<f64> {
        self.forward_cached(x).0
    }

    fn backward(&mut self, cache: &ObsNetCache, dout: &Array1<f64>) {
        let dflat = self.fc.backward(&cache.flat.view(), &dout.view());
        let da3 = Array3::from_shape_vec(cache.a3.raw_dim(), dflat.to_vec())
            .expect("flatten roundtrip");
        let dp3 = relu_backward(&cache.p3, &da3);
        let da2 = self.down.backward(&cache.a2.view(), &dp3.view());
        let ds2 = relu_backward(&cache.s2, &da2);
        let dres_in = self.res.backward(&cache.a1.view(), &ds2.view());
        let da1 = &ds2 + &dres_in;
        let dp1 = relu_backward(&cache.p1, &da1);
        self.conv1.backward(&cache.x.view(), &dp1.view());
    }
}

impl ParamSet for ObsNet {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.conv1.visit_params(&join_name(prefix, "conv1"), f);
        self.res.visit_params(&join_name(prefix, "res"), f);
        self.down.visit_params(&join_name(prefix, "down"), f);
        self.fc.visit_params(&join_name(prefix, "fc"), f);
    }
}

/// Actor and critic over the reconstructor's deepest hidden state.
#[derive(Debug, Clone)]
pub struct SaccadeAgent {
    pub cfg: AgentConfig,
    actor: ObsNet,
    critic: ObsNet,
}

impl SaccadeAgent {
    pub fn new(cfg: AgentConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = substream(cfg.seed, 0xAC, 0);
        Ok(SaccadeAgent {
            cfg,
            actor: ObsNet::new(&mut rng, &cfg, cfg.num_actions),
            critic: ObsNet::new(&mut rng, &cfg, 1),
        })
    }

    fn check_obs(&self, obs: &Array3<f64>) -> Result<()> {
        let want = (self.cfg.obs_channels, self.cfg.obs_height, self.cfg.obs_width);
        if obs.dim() != want {
            return Err(Error::bounds(format!(
                "observation has shape {:?}, agent expects {want:?}",
                obs.dim()
            )));
        }
        Ok(())
    }

    /// Raw action preferences for an observation.
    pub fn action_logits(&self, obs: &Array3<f64>) -> Result<Array1<f64>> {
        self.check_obs(obs)?;
        Ok(self.actor.forward(obs))
    }

    /// State-value estimate for an observation.
    pub fn value(&self, obs: &Array3<f64>) -> Result<f64> {
        self.check_obs(obs)?;
        Ok(self.critic.forward(obs)[0])
    }

    pub fn to_checkpoint(&mut self, grid: crate::sampling::GridSpec) -> Result<Checkpoint> {
        let params = crate::nn::export_params(self);
        Checkpoint::new(CHECKPOINT_KIND, grid, &self.cfg, params)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint, grid: &crate::sampling::GridSpec) -> Result<Self> {
        ckpt.validate(CHECKPOINT_KIND, grid)?;
        let cfg: AgentConfig = ckpt.config_as()?;
        let mut agent = SaccadeAgent::new(cfg)?;
        import_params(&mut agent, ckpt.params.clone())?;
        Ok(agent)
    }
}

impl ParamSet for SaccadeAgent {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.actor.visit_params(&join_name(prefix, "actor"), f);
        self.critic.visit_params(&join_name(prefix, "critic"), f);
    }
}

// ---------------------------------------------------------------------------
// Episodes
// ---------------------------------------------------------------------------

/// One glimpse step of an episode. `obs_after` is the observation that
/// resulted from taking the action; the action itself was chosen from
/// the previous step's observation (or uniformly, for the first step).
#[derive(Debug, Clone)]
pub struct EpisodeStep {
    pub action: usize,
    pub log_prob: f64,
    pub reward: f64,
    pub value: f64,
    pub policy_chosen: bool,
    pub obs_after: Array3<f64>,
}

#[derive(Debug, Clone)]
pub struct EpisodeTrace {
    pub steps: Vec<EpisodeStep>,
    pub label: usize,
    pub final_correct: bool,
}

impl EpisodeTrace {
    pub fn total_reward(&self) -> f64 {
        self.steps.iter().map(|s| s.reward).sum()
    }

    pub fn actions(&self) -> Vec<usize> {
        self.steps.iter().map(|s| s.action).collect()
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EpisodeConfig {
    pub glimpses: usize,
    pub seed: u64,
}

/// Runs one glimpse episode: uniform-random first fixation, policy
/// fixations afterwards, no position revisited. The classifier scores
/// every intermediate reconstruction to produce the reward sequence.
#[allow(clippy::too_many_arguments)]
pub fn run_episode(
    recon: &ReconModel,
    agent: &SaccadeAgent,
    classifier: &dyn ClassifierAdapter,
    image: &Image,
    label: usize,
    sample_cfg: &SampleConfig,
    ep_cfg: &EpisodeConfig,
    image_id: u64,
    episode_idx: u64,
) -> Result<EpisodeTrace> {
    let grid = recon.grid;
    let n = grid.num_actions();
    if ep_cfg.glimpses == 0 {
        return Err(Error::config("episode needs at least one glimpse"));
    }
    if ep_cfg.glimpses > n {
        return Err(Error::config(format!(
            "{} glimpses cannot all be distinct with only {n} fovea positions",
            ep_cfg.glimpses
        )));
    }
    let mut act_rng = substream(ep_cfg.seed, image_id, episode_idx);
    let mut mask = ActionMask::all_valid(n);
    let mut state = recon.init_state(1)?.remove(0);
    let mut steps: Vec<EpisodeStep> = Vec::with_capacity(ep_cfg.glimpses);
    let mut final_correct = false;
    for t in 0..ep_cfg.glimpses {
        let (action, log_prob, policy_chosen) = if t == 0 {
            (act_rng.random_range(0..n), -(n as f64).ln(), false)
        } else {
            let obs = &steps[t - 1].obs_after;
            let logits = agent.action_logits(obs)?;
            let probs = masked_softmax(&logits.view(), &mask)?;
            let a = select_action(&probs.view(), &mut act_rng);
            (a, probs[a].ln(), true)
        };
        mask.invalidate(action)?;
        let draw = sample_mask(
            &grid,
            action,
            sample_cfg,
            image_id,
            episode_idx * ep_cfg.glimpses as u64 + t as u64,
        )?;
        let input = apply_mask(image, &draw)?.to_input();
        let (next, recon_img) = recon.step(&state, &input)?;
        state = next;
        let class_probs = classifier.probs(&recon_img)?;
        let reward = compute_reward(&class_probs.view(), label);
        final_correct = argmax_tie_lowest(&class_probs.view()) == label;
        let value = agent.value(&state.h3)?;
        steps.push(EpisodeStep {
            action,
            log_prob,
            reward,
            value,
            policy_chosen,
            obs_after: state.h3.clone(),
        });
    }
    Ok(EpisodeTrace {
        steps,
        label,
        final_correct,
    })
}

// ---------------------------------------------------------------------------
// Advantage actor-critic updates
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct A2cConfig {
    pub gamma: f64,
    pub entropy_bonus: f64,
}

impl A2cConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::config(format!(
                "discount must lie in [0, 1], got {}",
                self.gamma
            )));
        }
        if self.entropy_bonus < 0.0 {
            return Err(Error::config(format!(
                "entropy bonus must be non-negative, got {}",
                self.entropy_bonus
            )));
        }
        Ok(())
    }
}

impl Default for A2cConfig {
    fn default() -> Self {
        A2cConfig {
            gamma: 0.95,
            entropy_bonus: 0.01,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct A2cMetrics {
    pub actor_loss: f64,
    pub critic_loss: f64,
    pub mean_entropy: f64,
    pub mean_return: f64,
}

/// One synchronous update from a batch of traces.
///
/// Action probabilities and values are recomputed on the stored
/// observations with the current parameters; advantages and critic
/// targets use the rewards and values recorded during the rollout.
/// Losses sum over steps and average over traces. The entropy bonus
/// only shapes the actor gradient; the reported actor loss is the
/// plain policy-gradient surrogate.
pub fn a2c_update(
    agent: &mut SaccadeAgent,
    traces: &[EpisodeTrace],
    cfg: &A2cConfig,
    actor_opt: &mut Adam,
    critic_opt: &mut Adam,
) -> Result<A2cMetrics> {
    cfg.validate()?;
    if traces.is_empty() {
        return Err(Error::config("update needs at least one trace"));
    }
    zero_grads(agent);
    let mut actor_loss = 0.0;
    let mut critic_loss = 0.0;
    let mut entropy_sum = 0.0;
    let mut entropy_count = 0usize;
    let mut return_sum = 0.0;
    for trace in traces {
        if trace.steps.is_empty() {
            return Err(Error::config("trace with no steps"));
        }
        let rewards: Vec<f64> = trace.steps.iter().map(|s| s.reward).collect();
        let values: Vec<f64> = trace.steps.iter().map(|s| s.value).collect();
        let advs = advantage(&rewards, &values, cfg.gamma)?;
        let targets = critic_targets(&rewards, &values, cfg.gamma)?;
        return_sum += trace.total_reward();
        let mut mask = ActionMask::all_valid(agent.cfg.num_actions);
        for (t, step) in trace.steps.iter().enumerate() {
            // Critic regression toward the recorded bootstrap target.
            let (v, vcache) = agent.critic.forward_cached(&step.obs_after);
            let err = v[0] - targets[t];
            critic_loss += err * err;
            agent
                .critic
                .backward(&vcache, &Array1::from_elem(1, 2.0 * err));
            // Policy-gradient step for policy-chosen actions, masked
            // exactly as at selection time.
            if step.policy_chosen {
                if t == 0 {
                    return Err(Error::config(
                        "first step of a trace cannot be policy-chosen: no prior observation",
                    ));
                }
                let obs = &trace.steps[t - 1].obs_after;
                let (logits, acache) = agent.actor.forward_cached(obs);
                let probs = masked_softmax(&logits.view(), &mask)?;
                let h = entropy(&probs.view());
                entropy_sum += h;
                entropy_count += 1;
                actor_loss -= probs[step.action].ln() * advs[t];
                let mut dlogits = actor_logit_grad(&probs.view(), step.action, advs[t]);
                if cfg.entropy_bonus > 0.0 {
                    dlogits = dlogits
                        + neg_entropy_logit_grad(&probs.view()).mapv(|g| g * cfg.entropy_bonus);
                }
                agent.actor.backward(&acache, &dlogits);
            }
            mask.invalidate(step.action)?;
        }
    }
    let scale = 1.0 / traces.len() as f64;
    scale_grads(agent, scale);
    actor_opt.step(&mut agent.actor);
    critic_opt.step(&mut agent.critic);
    Ok(A2cMetrics {
        actor_loss: actor_loss * scale,
        critic_loss: critic_loss * scale,
        mean_entropy: if entropy_count > 0 {
            entropy_sum / entropy_count as f64
        } else {
            0.0
        },
        mean_return: return_sum * scale,
    })
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SaccadeTrainConfig {
    pub episodes: usize,
    pub batch_episodes: usize,
    pub glimpses: usize,
    pub gamma: f64,
    pub entropy_bonus: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub seed: u64,
}

impl SaccadeTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.episodes == 0 || self.batch_episodes == 0 || self.glimpses == 0 {
            return Err(Error::config(
                "episodes, batch size and glimpse count must all be positive",
            ));
        }
        if self.actor_lr <= 0.0 || self.critic_lr <= 0.0 {
            return Err(Error::config("learning rates must be positive"));
        }
        A2cConfig {
            gamma: self.gamma,
            entropy_bonus: self.entropy_bonus,
        }
        .validate()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SaccadeBatchMetrics {
    pub batch: usize,
    pub episodes_done: usize,
    pub mean_return: f64,
    pub actor_loss: f64,
    pub critic_loss: f64,
    pub mean_entropy: f64,
    pub accuracy: f64,
}

/// Trains the agent on clean images against a fixed reconstructor and
/// classifier. Episodes are grouped into synchronous update batches.
pub fn train_saccade(
    agent: &mut SaccadeAgent,
    recon: &ReconModel,
    classifier: &dyn ClassifierAdapter,
    images: &[Image],
    labels: &[usize],
    sample_cfg: &SampleConfig,
    cfg: &SaccadeTrainConfig,
) -> Result<Vec<SaccadeBatchMetrics>> {
    cfg.validate()?;
    if images.is_empty() || images.len() != labels.len() {
        return Err(Error::data(format!(
            "need matching non-empty images and labels, got {} and {}",
            images.len(),
            labels.len()
        )));
    }
    let a2c = A2cConfig {
        gamma: cfg.gamma,
        entropy_bonus: cfg.entropy_bonus,
    };
    let ep_cfg = EpisodeConfig {
        glimpses: cfg.glimpses,
        seed: crate::rng::derive_seed(cfg.seed, 1),
    };
    let mut actor_opt = Adam::new(cfg.actor_lr);
    let mut critic_opt = Adam::new(cfg.critic_lr);
    let n_batches = cfg.episodes.div_ceil(cfg.batch_episodes);
    let mut history = Vec::with_capacity(n_batches);
    let mut episode_idx = 0u64;
    for batch in 0..n_batches {
        let mut pick_rng = substream(cfg.seed, 0xEE, batch as u64);
        let count = cfg.batch_episodes.min(cfg.episodes - batch * cfg.batch_episodes);
        let mut traces = Vec::with_capacity(count);
        let mut correct = 0usize;
        for _ in 0..count {
            let i = pick_rng.random_range(0..images.len());
            let trace = run_episode(
                recon,
                agent,
                classifier,
                &images[i],
                labels[i],
                sample_cfg,
                &ep_cfg,
                i as u64,
                episode_idx,
            )?;
            correct += trace.final_correct as usize;
            traces.push(trace);
            episode_idx += 1;
        }
        let metrics = a2c_update(agent, &traces, &a2c, &mut actor_opt, &mut critic_opt)?;
        history.push(SaccadeBatchMetrics {
            batch,
            episodes_done: episode_idx as usize,
            mean_return: metrics.mean_return,
            actor_loss: metrics.actor_loss,
            critic_loss: metrics.critic_loss,
            mean_entropy: metrics.mean_entropy,
            accuracy: correct as f64 / count as f64,
        });
    }
    Ok(history)
}
