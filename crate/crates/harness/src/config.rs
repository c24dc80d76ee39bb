//! Run configuration: a TOML file with one section per stage, every
//! field optional, plus an environment override for the dataset root.
//!
//! Perturbation budgets are usually quoted as fractions of the pixel
//! range, so budget fields accept both `0.0314` and `"8/255"`.

use std::path::{Path, PathBuf};

use fovdef_core::classify::{
    ClassifierSpec, ClassifierTrainConfig, PatchAttentionConfig, SmallCnnConfig,
};
use fovdef_core::recon::{ReconConfig, ReconTrainConfig};
use fovdef_core::saccade::SaccadeTrainConfig;
use fovdef_core::sampling::{make_grid, GridSpec, SampleConfig};
use serde::{Deserialize, Serialize};

use crate::archive::AttackInfo;
use crate::error::{Error, Result};
use crate::pipeline::{DefenseConfig, SaccadeMode};

/// Environment variable overriding the dataset root. Takes effect when
/// no explicit root is passed on the command line.
pub const DATA_ROOT_ENV: &str = "FOVDEF_DATA_ROOT";

/// A number that may be written as a fraction string.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(transparent)]
pub struct Budget(pub f64);

pub fn parse_fraction(text: &str) -> std::result::Result<f64, String> {
    let t = text.trim();
    if let Some((num, den)) = t.split_once('/') {
        let n: f64 = num
            .trim()
            .parse()
            .map_err(|_| format!("bad numerator in {text:?}"))?;
        let d: f64 = den
            .trim()
            .parse()
            .map_err(|_| format!("bad denominator in {text:?}"))?;
        if d == 0.0 {
            return Err(format!("zero denominator in {text:?}"));
        }
        Ok(n / d)
    } else {
        t.parse()
            .map_err(|_| format!("{text:?} is neither a number nor a fraction"))
    }
}

impl<'de> Deserialize<'de> for Budget {
    fn deserialize<D>(deserializer: D) -> std::result::Result<Self, D::Error>
    where
        D: serde::Deserializer<'de>,
    {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(deserializer)? {
            Raw::Num(v) => Ok(Budget(v)),
            Raw::Text(s) => parse_fraction(&s).map(Budget).map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingSection {
    pub grid_n: usize,
    pub peripheral_prob: f64,
    pub glimpses: usize,
    pub seed: u64,
}

impl Default for SamplingSection {
    fn default() -> Self {
        SamplingSection {
            grid_n: 4,
            peripheral_prob: 0.25,
            glimpses: 3,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconSection {
    pub widths: [usize; 3],
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub final_blend: f64,
    pub seed: u64,
}

impl Default for ReconSection {
    fn default() -> Self {
        ReconSection {
            widths: [8, 16, 16],
            epochs: 8,
            learning_rate: 1e-3,
            batch_size: 16,
            final_blend: 0.8,
            seed: 11,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicySection {
    pub episodes: usize,
    pub batch_episodes: usize,
    pub trunk: usize,
    pub gamma: f64,
    pub entropy_bonus: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub seed: u64,
}

impl Default for PolicySection {
    fn default() -> Self {
        PolicySection {
            episodes: 3000,
            batch_episodes: 16,
            trunk: 8,
            gamma: 0.95,
            entropy_bonus: 0.01,
            actor_lr: 5e-4,
            critic_lr: 1e-3,
            seed: 13,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierSection {
    /// "small_cnn" or "patch_attention".
    pub arch: String,
    pub channels: [usize; 3],
    pub patch: usize,
    pub dim: usize,
    pub heads: usize,
    pub blocks: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for ClassifierSection {
    fn default() -> Self {
        ClassifierSection {
            arch: "small_cnn".to_string(),
            channels: [8, 12, 16],
            patch: 8,
            dim: 32,
            heads: 4,
            blocks: 2,
            epochs: 6,
            learning_rate: 1e-3,
            batch_size: 32,
            seed: 17,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackSection {
    pub kind: String,
    pub epsilon: Budget,
    pub alpha: Budget,
    pub steps: usize,
    pub decay: f64,
    pub random_start: bool,
    pub spsa_delta: f64,
    pub spsa_directions: usize,
    pub seed: u64,
}

impl Default for AttackSection {
    fn default() -> Self {
        AttackSection {
            kind: "mi_fgsm".to_string(),
            epsilon: Budget(8.0 / 255.0),
            alpha: Budget(2.0 / 255.0),
            steps: 10,
            decay: 1.0,
            random_start: true,
            spsa_delta: 0.01,
            spsa_directions: 128,
            seed: 23,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub per_class_cap: Option<usize>,
    pub filter_clean_correct: bool,
    /// Fixation list for the fixed saccade mode.
    pub fixed: Vec<usize>,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            per_class_cap: None,
            filter_clean_correct: true,
            fixed: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data_root: Option<PathBuf>,
    pub sampling: SamplingSection,
    pub recon: ReconSection,
    pub policy: PolicySection,
    pub classifier: ClassifierSection,
    pub attack: AttackSection,
    pub eval: EvalSection,
}

impl RunConfig {
    /// Parses the given file, or returns defaults when no file is
    /// named.
    pub fn load(path: Option<&Path>) -> Result<RunConfig> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        toml::from_str(&text)
            .map_err(|e| Error::config(format!("{}: {e}", path.display())))
    }

    /// Dataset root precedence: command line, then environment, then
    /// config file, then ./data.
    pub fn resolve_data_root(&self, cli: Option<&Path>) -> PathBuf {
        if let Some(p) = cli {
            return p.to_path_buf();
        }
        if let Some(v) = std::env::var_os(DATA_ROOT_ENV) {
            return PathBuf::from(v);
        }
        self.data_root
            .clone()
            .unwrap_or_else(|| PathBuf::from("data"))
    }

    pub fn sample_config(&self) -> Result<SampleConfig> {
        Ok(SampleConfig::new(
            self.sampling.peripheral_prob,
            self.sampling.seed,
        )?)
    }

    pub fn grid(&self, height: usize, width: usize) -> Result<GridSpec> {
        Ok(make_grid(height, width, self.sampling.grid_n)?)
    }

    pub fn recon_config(&self, image_channels: usize) -> ReconConfig {
        ReconConfig {
            image_channels,
            widths: self.recon.widths,
            seed: self.recon.seed,
        }
    }

    pub fn recon_train(&self) -> ReconTrainConfig {
        ReconTrainConfig {
            epochs: self.recon.epochs,
            learning_rate: self.recon.learning_rate,
            batch_size: self.recon.batch_size,
            glimpses: self.sampling.glimpses,
            final_blend: self.recon.final_blend,
            seed: self.recon.seed,
        }
    }

    pub fn policy_train(&self) -> SaccadeTrainConfig {
        SaccadeTrainConfig {
            episodes: self.policy.episodes,
            batch_episodes: self.policy.batch_episodes,
            glimpses: self.sampling.glimpses,
            gamma: self.policy.gamma,
            entropy_bonus: self.policy.entropy_bonus,
            actor_lr: self.policy.actor_lr,
            critic_lr: self.policy.critic_lr,
            seed: self.policy.seed,
        }
    }

    pub fn classifier_train(&self) -> ClassifierTrainConfig {
        ClassifierTrainConfig {
            epochs: self.classifier.epochs,
            learning_rate: self.classifier.learning_rate,
            batch_size: self.classifier.batch_size,
            seed: self.classifier.seed,
        }
    }

    pub fn classifier_spec(
        &self,
        in_channels: usize,
        num_classes: usize,
    ) -> Result<ClassifierSpec> {
        let c = &self.classifier;
        match c.arch.as_str() {
            "small_cnn" => Ok(ClassifierSpec::SmallCnn(SmallCnnConfig {
                in_channels,
                channels: c.channels,
                num_classes,
                seed: c.seed,
            })),
            "patch_attention" => Ok(ClassifierSpec::PatchAttention(PatchAttentionConfig {
                in_channels,
                patch: c.patch,
                dim: c.dim,
                heads: c.heads,
                blocks: c.blocks,
                num_classes,
                seed: c.seed,
            })),
            other => Err(Error::config(format!(
                "unknown classifier architecture {other:?}, expected small_cnn or patch_attention"
            ))),
        }
    }

    pub fn attack_info(&self) -> Result<AttackInfo> {
        let a = &self.attack;
        let info = match a.kind.as_str() {
            "mi_fgsm" => AttackInfo::mi_fgsm(a.epsilon.0, a.alpha.0, a.steps, a.decay),
            "pgd" => AttackInfo::pgd(a.epsilon.0, a.alpha.0, a.steps, a.random_start, a.seed),
            "spsa" => AttackInfo::spsa(
                a.epsilon.0,
                a.alpha.0,
                a.steps,
                a.spsa_delta,
                a.spsa_directions,
                a.seed,
            ),
            other => {
                return Err(Error::config(format!(
                    "unknown attack kind {other:?}, expected mi_fgsm, pgd, or spsa"
                )))
            }
        };
        Ok(info)
    }

    /// Defense settings for one saccade mode, drawing the sampling
    /// section for everything else.
    pub fn defense(&self, mode: SaccadeMode) -> Result<DefenseConfig> {
        Ok(DefenseConfig {
            sample: self.sample_config()?,
            glimpses: self.sampling.glimpses,
            mode,
        })
    }

    /// Parses a mode name from the command line. The fixed mode takes
    /// its fixation list from the eval section.
    pub fn mode_by_name(&self, name: &str) -> Result<SaccadeMode> {
        match name {
            "learned" => Ok(SaccadeMode::Learned),
            "random" => Ok(SaccadeMode::Random),
            "passthrough" | "undefended" => Ok(SaccadeMode::Passthrough),
            "fixed" => {
                if self.eval.fixed.is_empty() {
                    return Err(Error::config(
                        "fixed saccade mode needs eval.fixed to list fixations",
                    ));
                }
                Ok(SaccadeMode::Fixed(self.eval.fixed.clone()))
            }
            other => Err(Error::config(format!(
                "unknown defense mode {other:?}, expected learned, random, fixed, or passthrough"
            ))),
        }
    }
}
