//! Evaluation protocol: clean-correct filtering, defended and
//! undefended accuracy over archived attacks, and Wilson intervals.
//!
//! Every mode is scored on the identical image set, so rows within a
//! report are directly comparable. Reports carry the dataset digest;
//! merging rows measured on different data is refused downstream.
//! Scoring parallelizes across images; models are shared read-only and
//! per-image randomness comes from id-keyed substreams, so results do
//! not depend on scheduling.

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use fovdef_core::classify::ClassifierAdapter;
use fovdef_core::img::Image;
use fovdef_core::nn::act::argmax_tie_lowest;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::archive::Archive;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::pipeline::{DefenseConfig, Defender, NamedClassifier};

pub const EVAL_FORMAT_VERSION: u32 = 1;

/// Two-sided 95% critical value, also used for one-sided bounds at
/// 97.5%.
pub const WILSON_Z: f64 = 1.959963984540054;

/// Wilson score interval for a binomial proportion, as fractions.
pub fn wilson_interval(correct: usize, total: usize) -> Result<(f64, f64)> {
    if total == 0 {
        return Err(Error::data("cannot form an interval over zero trials"));
    }
    if correct > total {
        return Err(Error::data(format!(
            "{correct} successes out of {total} trials is impossible"
        )));
    }
    let n = total as f64;
    let p = correct as f64 / n;
    let z2 = WILSON_Z * WILSON_Z;
    let denom = 1.0 + z2 / n;
    let center = p + z2 / (2.0 * n);
    let half = WILSON_Z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    Ok(((center - half) / denom, (center + half) / denom))
}

/// A measured accuracy with its 95% interval, all in percent.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Accuracy {
    pub correct: usize,
    pub total: usize,
    pub percent: f64,
    pub wilson_low: f64,
    pub wilson_high: f64,
}

impl Accuracy {
    pub fn from_counts(correct: usize, total: usize) -> Result<Accuracy> {
        let (low, high) = wilson_interval(correct, total)?;
        Ok(Accuracy {
            correct,
            total,
            percent: 100.0 * correct as f64 / total as f64,
            wilson_low: 100.0 * low,
            wilson_high: 100.0 * high,
        })
    }
}

/// One accuracy measurement. Clean rows use attack "clean", epsilon 0
/// and surrogate "-".
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalRow {
    pub surrogate: String,
    pub attack: String,
    pub epsilon: f64,
    pub defense: String,
    pub accuracy: Accuracy,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub format_version: u32,
    pub target: String,
    pub dataset_digest: String,
    pub filtered_to_clean_correct: bool,
    pub dataset_size: usize,
    pub sample_count: usize,
    pub rows: Vec<EvalRow>,
    pub runtime_seconds: f64,
}

impl EvalReport {
    pub fn find_row(&self, attack: &str, epsilon: f64, defense: &str) -> Option<&EvalRow> {
        self.rows
            .iter()
            .find(|r| r.attack == attack && r.epsilon == epsilon && r.defense == defense)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        fs::write(path, text).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<EvalReport> {
        let text = fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let report: EvalReport = serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        if report.format_version != EVAL_FORMAT_VERSION {
            return Err(Error::data(format!(
                "report {} has format version {}, this build reads {}",
                path.display(),
                report.format_version,
                EVAL_FORMAT_VERSION
            )));
        }
        Ok(report)
    }
}

/// A named defense configuration to score.
pub struct ModeSpec {
    pub name: String,
    pub cfg: DefenseConfig,
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    /// Keep only images the target classifies correctly when clean.
    /// On by default; robustness on misclassified inputs is noise.
    pub filter_clean_correct: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            filter_clean_correct: true,
        }
    }
}

fn predicts(classifier: &NamedClassifier, image: &Image, label: usize) -> Result<bool> {
    let probs = classifier.model.probs(image)?;
    Ok(argmax_tie_lowest(&probs.view()) == label)
}

/// Scores every mode on clean inputs and on each archive, all over the
/// same (optionally clean-correct filtered) image subset.
pub fn evaluate(
    dataset: &Dataset,
    archives: &[Archive],
    defender: &Defender,
    modes: &[ModeSpec],
    target: &NamedClassifier,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    let started = Instant::now();
    if modes.is_empty() {
        return Err(Error::config("no defense modes requested"));
    }
    if dataset.is_empty() {
        return Err(Error::data("evaluation dataset is empty"));
    }
    for archive in archives {
        archive.validate_against(dataset)?;
    }

    let kept: Vec<usize> = if opts.filter_clean_correct {
        let flags = dataset
            .samples
            .par_iter()
            .map(|s| predicts(target, &s.image, s.label))
            .collect::<Result<Vec<bool>>>()?;
        flags
            .iter()
            .enumerate()
            .filter_map(|(i, &ok)| ok.then_some(i))
            .collect()
    } else {
        (0..dataset.len()).collect()
    };
    if kept.is_empty() {
        return Err(Error::data(format!(
            "target {} classifies no image correctly, nothing to evaluate",
            target.name
        )));
    }

    let mut rows = Vec::new();
    for mode in modes {
        let correct = kept
            .par_iter()
            .map(|&i| {
                let sample = &dataset.samples[i];
                let (pred, _) = defender.classify_defended(
                    &sample.image,
                    &mode.cfg,
                    sample.id,
                    &target.model,
                )?;
                Ok(usize::from(pred == sample.label))
            })
            .sum::<Result<usize>>()?;
        rows.push(EvalRow {
            surrogate: "-".to_string(),
            attack: "clean".to_string(),
            epsilon: 0.0,
            defense: mode.name.clone(),
            accuracy: Accuracy::from_counts(correct, kept.len())?,
        });
    }

    for archive in archives {
        let mut attacked: HashMap<u64, Image> = HashMap::with_capacity(kept.len());
        for &i in &kept {
            let sample = &dataset.samples[i];
            let entry = archive.entry_for(sample.id).ok_or_else(|| {
                Error::data(format!(
                    "archive {} has no entry for image id {}",
                    archive.dir().display(),
                    sample.id
                ))
            })?;
            attacked.insert(sample.id, archive.load_image(entry)?);
        }
        for mode in modes {
            let correct = kept
                .par_iter()
                .map(|&i| {
                    let sample = &dataset.samples[i];
                    let image = &attacked[&sample.id];
                    let (pred, _) =
                        defender.classify_defended(image, &mode.cfg, sample.id, &target.model)?;
                    Ok(usize::from(pred == sample.label))
                })
                .sum::<Result<usize>>()?;
            let m = &archive.manifest;
            rows.push(EvalRow {
                surrogate: m.surrogate.clone(),
                attack: m.attack.kind.clone(),
                epsilon: m.attack.epsilon,
                defense: mode.name.clone(),
                accuracy: Accuracy::from_counts(correct, kept.len())?,
            });
        }
    }

    Ok(EvalReport {
        format_version: EVAL_FORMAT_VERSION,
        target: target.name.clone(),
        dataset_digest: dataset.digest(),
        filtered_to_clean_correct: opts.filter_clean_correct,
        dataset_size: dataset.len(),
        sample_count: kept.len(),
        rows,
        runtime_seconds: started.elapsed().as_secs_f64(),
    })
}
