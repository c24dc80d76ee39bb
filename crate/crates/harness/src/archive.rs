//! Adversarial example archives.
//!
//! Attacks are expensive, so each (surrogate, attack, epsilon) sweep
//! is generated once into a directory of raw image files plus a JSON
//! manifest, then reused across every defense configuration. Pixels
//! are stored as little-endian f64 so reloading is bit exact, and
//! every file carries a digest checked on read.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use fovdef_core::attacks::{
    mi_fgsm, pgd, spsa, AttackOutcome, AttackSpec, CrossEntropyOracle, SpsaConfig,
};
use fovdef_core::classify::AnyClassifier;
use fovdef_core::img::Image;
use fovdef_core::rng::derive_seed;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{hex_string, Dataset, Sample};
use crate::error::{Error, Result};
use crate::pipeline::NamedClassifier;

pub const ARCHIVE_FORMAT_VERSION: u32 = 1;
pub const MANIFEST_NAME: &str = "manifest.json";

/// Attack identity and parameters, recorded verbatim in the manifest
/// so results stay attributable after the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackInfo {
    /// One of "mi_fgsm", "pgd", "spsa".
    pub kind: String,
    pub epsilon: f64,
    pub alpha: f64,
    pub steps: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decay: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub random_start: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spsa_delta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spsa_directions: Option<usize>,
    pub seed: u64,
}

impl AttackInfo {
    pub fn mi_fgsm(epsilon: f64, alpha: f64, steps: usize, decay: f64) -> Self {
        AttackInfo {
            kind: "mi_fgsm".to_string(),
            epsilon,
            alpha,
            steps,
            decay: Some(decay),
            random_start: None,
            spsa_delta: None,
            spsa_directions: None,
            seed: 0,
        }
    }

    pub fn pgd(epsilon: f64, alpha: f64, steps: usize, random_start: bool, seed: u64) -> Self {
        AttackInfo {
            kind: "pgd".to_string(),
            epsilon,
            alpha,
            steps,
            decay: None,
            random_start: Some(random_start),
            spsa_delta: None,
            spsa_directions: None,
            seed,
        }
    }

    pub fn spsa(
        epsilon: f64,
        alpha: f64,
        steps: usize,
        delta: f64,
        directions: usize,
        seed: u64,
    ) -> Self {
        AttackInfo {
            kind: "spsa".to_string(),
            epsilon,
            alpha,
            steps,
            decay: None,
            random_start: None,
            spsa_delta: Some(delta),
            spsa_directions: Some(directions),
            seed,
        }
    }

    pub fn spec(&self) -> Result<AttackSpec> {
        Ok(AttackSpec::new(self.epsilon, self.alpha, self.steps)?)
    }
}

/// One attacked image: identity, ground truth, file, and integrity
/// plus cost metadata.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArchiveEntry {
    pub id: u64,
    pub label: usize,
    pub file: String,
    pub sha256: String,
    pub queries: u64,
    pub degenerate_steps: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArchiveManifest {
    pub format_version: u32,
    pub surrogate: String,
    pub attack: AttackInfo,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub entries: Vec<ArchiveEntry>,
}

/// An opened archive directory with its parsed manifest and an id
/// index for constant-time lookup.
#[derive(Debug)]
pub struct Archive {
    dir: PathBuf,
    pub manifest: ArchiveManifest,
    by_id: HashMap<u64, usize>,
}

impl Archive {
    pub fn open(dir: &Path) -> Result<Archive> {
        let manifest_path = dir.join(MANIFEST_NAME);
        let text = fs::read_to_string(&manifest_path).map_err(|source| Error::Io {
            path: manifest_path.clone(),
            source,
        })?;
        let manifest: ArchiveManifest =
            serde_json::from_str(&text).map_err(|source| Error::Json {
                path: manifest_path.clone(),
                source,
            })?;
        if manifest.format_version != ARCHIVE_FORMAT_VERSION {
            return Err(Error::data(format!(
                "archive {} has format version {}, this build reads {}",
                dir.display(),
                manifest.format_version,
                ARCHIVE_FORMAT_VERSION
            )));
        }
        if manifest.channels == 0 || manifest.height == 0 || manifest.width == 0 {
            return Err(Error::data(format!(
                "archive {} declares a degenerate image shape",
                dir.display()
            )));
        }
        if manifest.entries.is_empty() {
            return Err(Error::data(format!("archive {} is empty", dir.display())));
        }
        let mut by_id = HashMap::with_capacity(manifest.entries.len());
        for (i, entry) in manifest.entries.iter().enumerate() {
            if by_id.insert(entry.id, i).is_some() {
                return Err(Error::data(format!(
                    "archive {} lists image id {} twice",
                    dir.display(),
                    entry.id
                )));
            }
        }
        Ok(Archive {
            dir: dir.to_path_buf(),
            manifest,
            by_id,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn entry_for(&self, id: u64) -> Option<&ArchiveEntry> {
        self.by_id.get(&id).map(|&i| &self.manifest.entries[i])
    }

    /// Reads one attacked image, verifying length and digest.
    pub fn load_image(&self, entry: &ArchiveEntry) -> Result<Image> {
        let path = self.dir.join(&entry.file);
        let bytes = fs::read(&path).map_err(|source| Error::Io {
            path: path.clone(),
            source,
        })?;
        let digest = hex_string(&Sha256::digest(&bytes));
        if digest != entry.sha256 {
            return Err(Error::data(format!(
                "digest mismatch for {}: manifest says {}, file hashes to {digest}",
                path.display(),
                entry.sha256
            )));
        }
        let m = &self.manifest;
        image_from_bytes(&bytes, m.channels, m.height, m.width)
            .map_err(|e| Error::data(format!("{}: {e}", path.display())))
    }

    /// Checks that the manifest describes this dataset: same image
    /// shape, and every archived id present with a matching label.
    /// Mismatches are reported together rather than one at a time.
    pub fn validate_against(&self, dataset: &Dataset) -> Result<()> {
        let mut problems = Vec::new();
        if !dataset.is_empty() {
            let (c, h, w) = dataset.dims()?;
            let m = &self.manifest;
            if (m.channels, m.height, m.width) != (c, h, w) {
                problems.push(format!(
                    "archive images are {}x{}x{}, dataset images are {c}x{h}x{w}",
                    m.channels, m.height, m.width
                ));
            }
        }
        let mut labels = HashMap::with_capacity(dataset.len());
        for sample in &dataset.samples {
            labels.insert(sample.id, sample.label);
        }
        for entry in &self.manifest.entries {
            match labels.get(&entry.id) {
                None => problems.push(format!("archived id {} is not in the dataset", entry.id)),
                Some(&label) if label != entry.label => problems.push(format!(
                    "id {}: archive label {} vs dataset label {label}",
                    entry.id, entry.label
                )),
                Some(_) => {}
            }
            if problems.len() >= 8 {
                problems.push("...".to_string());
                break;
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::data(format!(
                "archive {} does not match the dataset: {}",
                self.dir.display(),
                problems.join("; ")
            )))
        }
    }
}

fn image_bytes(image: &Image) -> Vec<u8> {
    let mut bytes = Vec::with_capacity(image.len() * 8);
    for &v in image.iter() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    bytes
}

fn image_from_bytes(bytes: &[u8], channels: usize, height: usize, width: usize) -> Result<Image> {
    let want = channels * height * width * 8;
    if bytes.len() != want {
        return Err(Error::data(format!(
            "expected {want} bytes for a {channels}x{height}x{width} image, got {}",
            bytes.len()
        )));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|chunk| f64::from_le_bytes(chunk.try_into().expect("chunk of 8")))
        .collect();
    Image::from_shape_vec((channels, height, width), values)
        .map_err(|e| Error::data(format!("image reshape failed: {e}")))
}

/// Attacks every dataset image with the surrogate and writes the
/// results plus manifest into `dir`.
fn attack_one(
    model: &mut AnyClassifier,
    sample: &Sample,
    attack: &AttackInfo,
    spec: &AttackSpec,
) -> Result<AttackOutcome> {
    let outcome = match attack.kind.as_str() {
        "mi_fgsm" => mi_fgsm(
            model,
            &sample.image,
            sample.label,
            spec,
            attack.decay.unwrap_or(1.0),
        )?,
        "pgd" => pgd(
            model,
            &sample.image,
            sample.label,
            spec,
            attack.random_start.unwrap_or(true),
            derive_seed(attack.seed, sample.id),
        )?,
        "spsa" => {
            let cfg = SpsaConfig {
                delta: attack.spsa_delta.unwrap_or(0.01),
                directions: attack.spsa_directions.unwrap_or(128),
            };
            let mut oracle = CrossEntropyOracle {
                classifier: &*model,
                label: sample.label,
            };
            spsa(
                &mut oracle,
                &sample.image,
                spec,
                &cfg,
                derive_seed(attack.seed, sample.id),
            )?
        }
        other => {
            return Err(Error::config(format!(
                "unknown attack kind {other:?}, expected mi_fgsm, pgd, or spsa"
            )))
        }
    };
    Ok(outcome)
}

pub fn generate_archive(
    surrogate: &NamedClassifier,
    dataset: &Dataset,
    attack: &AttackInfo,
    dir: &Path,
) -> Result<Archive> {
    if dataset.is_empty() {
        return Err(Error::data("cannot attack an empty dataset"));
    }
    let (channels, height, width) = dataset.dims()?;
    let spec = attack.spec()?;
    fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    // Attacks parallelize across images; gradient attacks scratch the
    // model's buffers, so each worker gets its own clone. Every image
    // is seeded by its id, making the result scheduling-independent.
    let outcomes = dataset
        .samples
        .par_iter()
        .map_init(
            || surrogate.model.clone(),
            |model, sample| attack_one(model, sample, attack, &spec),
        )
        .collect::<Result<Vec<AttackOutcome>>>()?;
    let mut entries = Vec::with_capacity(dataset.len());
    for (sample, outcome) in dataset.samples.iter().zip(&outcomes) {
        let file = format!("adv_{:06}.bin", sample.id);
        let bytes = image_bytes(&outcome.image);
        let digest = hex_string(&Sha256::digest(&bytes));
        let path = dir.join(&file);
        fs::write(&path, &bytes).map_err(|source| Error::Io { path, source })?;
        entries.push(ArchiveEntry {
            id: sample.id,
            label: sample.label,
            file,
            sha256: digest,
            queries: outcome.queries,
            degenerate_steps: outcome.degenerate_steps,
        });
    }
    let manifest = ArchiveManifest {
        format_version: ARCHIVE_FORMAT_VERSION,
        surrogate: surrogate.name.clone(),
        attack: attack.clone(),
        channels,
        height,
        width,
        entries,
    };
    let manifest_path = dir.join(MANIFEST_NAME);
    let text = serde_json::to_string_pretty(&manifest).map_err(|source| Error::Json {
        path: manifest_path.clone(),
        source,
    })?;
    fs::write(&manifest_path, text).map_err(|source| Error::Io {
        path: manifest_path,
        source,
    })?;
    Archive::open(dir)
}
