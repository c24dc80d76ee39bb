//! Shared fixtures: tiny untrained models over the synthetic benchmark.
//! Protocol tests need valid shapes and determinism, not accuracy.

// Each test binary compiles this module separately and uses a subset.
#![allow(dead_code)]

use fovdef_core::classify::{AnyClassifier, ClassifierSpec, SmallCnnConfig};
use fovdef_core::recon::{ReconConfig, ReconModel};
use fovdef_core::saccade::{AgentConfig, SaccadeAgent};
use fovdef_core::sampling::{make_grid, GridSpec, SampleConfig};
use fovdef_harness::dataset::Dataset;
use fovdef_harness::pipeline::{DefenseConfig, Defender, NamedClassifier, SaccadeMode};
use fovdef_harness::synth::{synth_dataset, CHANNELS, NUM_CLASSES, SIDE};

pub fn grid() -> GridSpec {
    make_grid(SIDE, SIDE, 4).unwrap()
}

pub fn small_dataset(per_class: usize, seed: u64) -> Dataset {
    synth_dataset(per_class, seed)
}

pub fn fresh_recon(seed: u64) -> ReconModel {
    ReconModel::new(
        ReconConfig {
            image_channels: CHANNELS,
            widths: [2, 3, 3],
            seed,
        },
        grid(),
    )
    .unwrap()
}

pub fn fresh_agent(recon: &ReconModel, seed: u64) -> SaccadeAgent {
    SaccadeAgent::new(AgentConfig::for_recon(recon, 4, seed)).unwrap()
}

pub fn fresh_defender(seed: u64) -> Defender {
    let recon = fresh_recon(seed);
    let agent = fresh_agent(&recon, seed + 1);
    Defender::new(recon, Some(agent)).unwrap()
}

pub fn fresh_classifier(name: &str, seed: u64) -> NamedClassifier {
    let spec = ClassifierSpec::SmallCnn(SmallCnnConfig {
        in_channels: CHANNELS,
        channels: [2, 3, 4],
        num_classes: NUM_CLASSES,
        seed,
    });
    NamedClassifier {
        name: name.to_string(),
        model: AnyClassifier::build(spec, grid()).unwrap(),
    }
}

pub fn defense(mode: SaccadeMode, glimpses: usize, seed: u64) -> DefenseConfig {
    DefenseConfig {
        sample: SampleConfig::new(0.25, seed).unwrap(),
        glimpses,
        mode,
    }
}
