//! Defense assembly: glimpse scheduling, reconstruction, and defended
//! classification. Swapping the classifier touches nothing here; the
//! defense never reads classifier state.

use std::path::Path;

use fovdef_core::checkpoint::Checkpoint;
use fovdef_core::classify::{AnyClassifier, ClassifierAdapter};
use fovdef_core::img::Image;
use fovdef_core::nn::act::argmax_tie_lowest;
use fovdef_core::recon::ReconModel;
use fovdef_core::rng::{derive_seed, substream};
use fovdef_core::saccade::{masked_softmax, ActionMask, SaccadeAgent};
use fovdef_core::sampling::{apply_mask, sample_mask, GridSpec, SampleConfig};
use rand::Rng;

use crate::error::{Error, Result};

/// How the fovea moves across glimpses.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SaccadeMode {
    /// Greedy argmax of the trained policy, starting from the zeroed
    /// reconstructor state.
    Learned,
    /// Uniform random without replacement, seeded per image.
    Random,
    /// A caller-supplied fixation list, visited in order.
    Fixed(Vec<usize>),
    /// No defense at all; the image goes straight through. This is the
    /// undefended baseline measured by the same code path.
    Passthrough,
}

impl SaccadeMode {
    pub fn name(&self) -> &'static str {
        match self {
            SaccadeMode::Learned => "learned",
            SaccadeMode::Random => "random",
            SaccadeMode::Fixed(_) => "fixed",
            SaccadeMode::Passthrough => "passthrough",
        }
    }
}

/// Everything the defense needs besides the models: sampling
/// parameters, the glimpse budget, and the saccade mode.
#[derive(Debug, Clone)]
pub struct DefenseConfig {
    pub sample: SampleConfig,
    pub glimpses: usize,
    pub mode: SaccadeMode,
}

/// All reconstructions and fixations from one defended pass.
#[derive(Debug, Clone)]
pub struct DefenseTrace {
    pub actions: Vec<usize>,
    pub recons: Vec<Image>,
}

impl DefenseTrace {
    /// The reconstruction handed to the classifier.
    pub fn final_recon(&self) -> &Image {
        self.recons.last().expect("trace holds at least one image")
    }
}

/// A classifier with a reporting identity.
pub struct NamedClassifier {
    pub name: String,
    pub model: AnyClassifier,
}

/// Loaded reconstructor plus optional policy, validated to agree on
/// grid and observation shapes.
#[derive(Debug)]
pub struct Defender {
    recon: ReconModel,
    policy: Option<SaccadeAgent>,
}

impl Defender {
    pub fn new(recon: ReconModel, policy: Option<SaccadeAgent>) -> Result<Self> {
        if let Some(agent) = &policy {
            let (c, h, w) = recon.observation_dim();
            let cfg = &agent.cfg;
            if (cfg.obs_channels, cfg.obs_height, cfg.obs_width) != (c, h, w)
                || cfg.num_actions != recon.grid.num_actions()
            {
                return Err(Error::config(format!(
                    "policy expects {}x{}x{} observations over {} actions, reconstructor provides {c}x{h}x{w} over {}",
                    cfg.obs_channels,
                    cfg.obs_height,
                    cfg.obs_width,
                    cfg.num_actions,
                    recon.grid.num_actions()
                )));
            }
        }
        Ok(Defender { recon, policy })
    }

    pub fn grid(&self) -> GridSpec {
        self.recon.grid
    }

    pub fn recon(&self) -> &ReconModel {
        &self.recon
    }

    pub fn has_policy(&self) -> bool {
        self.policy.is_some()
    }

    fn check_image(&self, image: &Image) -> Result<()> {
        let grid = self.recon.grid;
        let (_, h, w) = image.dim();
        if (h, w) != (grid.image_height, grid.image_width) {
            return Err(Error::config(format!(
                "image is {h}x{w} but the defense grid expects {}x{}",
                grid.image_height, grid.image_width
            )));
        }
        Ok(())
    }

    /// Runs the glimpse loop and returns every intermediate
    /// reconstruction plus the fixation sequence. Passthrough returns
    /// the input unchanged with no fixations.
    pub fn defend_trace(
        &self,
        image: &Image,
        cfg: &DefenseConfig,
        image_id: u64,
    ) -> Result<DefenseTrace> {
        self.check_image(image)?;
        let grid = self.recon.grid;
        let n = grid.num_actions();
        if matches!(cfg.mode, SaccadeMode::Passthrough) {
            return Ok(DefenseTrace {
                actions: Vec::new(),
                recons: vec![image.clone()],
            });
        }
        let planned: Option<Vec<usize>> = match &cfg.mode {
            SaccadeMode::Fixed(list) => {
                if list.is_empty() {
                    return Err(Error::config("fixed saccade mode needs a fixation list"));
                }
                for &idx in list {
                    if idx >= n {
                        return Err(Error::config(format!(
                            "fixation {idx} out of range for {n} grid positions"
                        )));
                    }
                }
                Some(list.clone())
            }
            SaccadeMode::Random => {
                let t = self.check_budget(cfg.glimpses, n)?;
                let mut pool: Vec<usize> = (0..n).collect();
                let mut rng = substream(derive_seed(cfg.sample.seed, 0x5ACC), image_id, 0);
                let mut picks = Vec::with_capacity(t);
                for _ in 0..t {
                    let k = rng.random_range(0..pool.len());
                    picks.push(pool.swap_remove(k));
                }
                Some(picks)
            }
            SaccadeMode::Learned => {
                if self.policy.is_none() {
                    return Err(Error::config(
                        "learned saccade mode requires a policy checkpoint",
                    ));
                }
                self.check_budget(cfg.glimpses, n)?;
                None
            }
            SaccadeMode::Passthrough => unreachable!("handled above"),
        };

        let steps = planned.as_ref().map(|p| p.len()).unwrap_or(cfg.glimpses);
        let mut mask_state = ActionMask::all_valid(n);
        let mut state = self.recon.init_state(1)?.remove(0);
        let mut actions = Vec::with_capacity(steps);
        let mut recons = Vec::with_capacity(steps);
        for t in 0..steps {
            let action = match &planned {
                Some(list) => list[t],
                None => {
                    let agent = self.policy.as_ref().expect("checked above");
                    let logits = agent.action_logits(&state.h3)?;
                    let probs = masked_softmax(&logits.view(), &mask_state)?;
                    argmax_tie_lowest(&probs.view())
                }
            };
            if planned.is_none() {
                mask_state.invalidate(action)?;
            }
            let mask = sample_mask(&grid, action, &cfg.sample, image_id, t as u64)?;
            let input = apply_mask(image, &mask)?.to_input();
            let (next, recon_img) = self.recon.step(&state, &input)?;
            state = next;
            actions.push(action);
            recons.push(recon_img);
        }
        Ok(DefenseTrace { actions, recons })
    }

    fn check_budget(&self, glimpses: usize, n: usize) -> Result<usize> {
        if glimpses == 0 || glimpses > n {
            return Err(Error::config(format!(
                "glimpse budget must lie in 1..={n}, got {glimpses}"
            )));
        }
        Ok(glimpses)
    }

    /// Final reconstruction only.
    pub fn defend(&self, image: &Image, cfg: &DefenseConfig, image_id: u64) -> Result<Image> {
        let mut trace = self.defend_trace(image, cfg, image_id)?;
        Ok(trace.recons.pop().expect("trace holds at least one image"))
    }

    /// Defended prediction: the classifier only ever sees the
    /// reconstruction (or the raw image in passthrough mode).
    pub fn classify_defended(
        &self,
        image: &Image,
        cfg: &DefenseConfig,
        image_id: u64,
        classifier: &dyn ClassifierAdapter,
    ) -> Result<(usize, f64)> {
        let defended = self.defend(image, cfg, image_id)?;
        let probs = classifier.probs(&defended)?;
        let class = argmax_tie_lowest(&probs.view());
        Ok((class, probs[class]))
    }
}

/// Loads a reconstructor checkpoint, and a policy checkpoint when
/// given, validating both against the expected grid.
pub fn load_defender(
    recon_path: &Path,
    policy_path: Option<&Path>,
    grid: &GridSpec,
) -> Result<Defender> {
    let recon_ckpt = Checkpoint::load(recon_path)?;
    let recon = ReconModel::from_checkpoint(&recon_ckpt, grid)?;
    let policy = match policy_path {
        Some(path) => {
            let ckpt = Checkpoint::load(path)?;
            Some(SaccadeAgent::from_checkpoint(&ckpt, grid)?)
        }
        None => None,
    };
    Defender::new(recon, policy)
}

/// Loads a classifier checkpoint; the reporting name is the file stem.
pub fn load_classifier(path: &Path, grid: &GridSpec) -> Result<NamedClassifier> {
    let ckpt = Checkpoint::load(path)?;
    let model = AnyClassifier::from_checkpoint(&ckpt, grid)?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "classifier".to_string());
    Ok(NamedClassifier { name, model })
}
