//! Evaluation protocol: filtering, row structure, interval math, and
//! comparability guards.

mod common;

use fovdef_core::classify::ClassifierAdapter;
use fovdef_core::nn::act::argmax_tie_lowest;
use fovdef_harness::archive::{generate_archive, AttackInfo};
use fovdef_harness::dataset::Dataset;
use fovdef_harness::evalloop::{
    evaluate, wilson_interval, Accuracy, EvalOptions, EvalReport, ModeSpec,
};
use fovdef_harness::pipeline::{NamedClassifier, SaccadeMode};
use tempfile::tempdir;

use common::{defense, fresh_classifier, fresh_defender, small_dataset};

#[test]
fn wilson_interval_basic_properties() {
    // Certainty boundaries are exact.
    let (lo, hi) = wilson_interval(0, 50).unwrap();
    assert!(lo.abs() < 1e-12);
    assert!(hi > 0.0 && hi < 0.2);
    let (lo, hi) = wilson_interval(50, 50).unwrap();
    assert!((hi - 1.0).abs() < 1e-12);
    assert!(lo > 0.8 && lo < 1.0);
    // The interval straddles the point estimate and is monotone in k.
    let mut last_lo = -1.0;
    for k in 0..=20 {
        let (lo, hi) = wilson_interval(k, 20).unwrap();
        let p = k as f64 / 20.0;
        assert!(lo <= p + 1e-12 && p <= hi + 1e-12);
        assert!((0.0..=1.0).contains(&lo) && (0.0..=1.0).contains(&hi));
        assert!(lo >= last_lo);
        last_lo = lo;
    }
    // Known value: 8/10 at 95% is roughly [0.49, 0.94].
    let (lo, hi) = wilson_interval(8, 10).unwrap();
    assert!((lo - 0.4901).abs() < 5e-3, "low {lo}");
    assert!((hi - 0.9433).abs() < 5e-3, "high {hi}");
    assert!(wilson_interval(1, 0).is_err());
    assert!(wilson_interval(5, 4).is_err());
}

#[test]
fn accuracy_is_reported_in_percent() {
    let a = Accuracy::from_counts(3, 4).unwrap();
    assert!((a.percent - 75.0).abs() < 1e-12);
    assert!(a.wilson_low >= 0.0 && a.wilson_high <= 100.0);
    assert!(a.wilson_low <= a.percent && a.percent <= a.wilson_high);
}

fn clean_correct_count(ds: &Dataset, clf: &NamedClassifier) -> usize {
    ds.samples
        .iter()
        .filter(|s| {
            let probs = clf.model.probs(&s.image).unwrap();
            argmax_tie_lowest(&probs.view()) == s.label
        })
        .count()
}

#[test]
fn rows_cover_every_mode_and_archive_on_one_image_set() {
    let ds = small_dataset(2, 5);
    let defender = fresh_defender(3);
    let target = fresh_classifier("target", 9);
    let surrogate = fresh_classifier("surrogate", 7);
    let dir = tempdir().unwrap();
    let attack = AttackInfo::mi_fgsm(8.0 / 255.0, 2.0 / 255.0, 3, 1.0);
    let archive = generate_archive(&surrogate, &ds, &attack, dir.path()).unwrap();
    let modes = vec![
        ModeSpec {
            name: "undefended".to_string(),
            cfg: defense(SaccadeMode::Passthrough, 3, 7),
        },
        ModeSpec {
            name: "random".to_string(),
            cfg: defense(SaccadeMode::Random, 3, 7),
        },
    ];
    let opts = EvalOptions {
        filter_clean_correct: false,
    };
    let report = evaluate(&ds, &[archive], &defender, &modes, &target, &opts).unwrap();
    assert_eq!(report.sample_count, ds.len());
    assert_eq!(report.dataset_size, ds.len());
    assert_eq!(report.rows.len(), 4, "2 clean rows + 2 attacked rows");
    for row in &report.rows {
        assert_eq!(row.accuracy.total, report.sample_count);
        assert!((0.0..=100.0).contains(&row.accuracy.percent));
        assert!(row.accuracy.wilson_low <= row.accuracy.percent + 1e-9);
        assert!(row.accuracy.percent <= row.accuracy.wilson_high + 1e-9);
    }
    assert!(report.find_row("clean", 0.0, "undefended").is_some());
    assert!(report.find_row("clean", 0.0, "random").is_some());
    let attacked = report
        .find_row("mi_fgsm", 8.0 / 255.0, "undefended")
        .expect("attacked row present");
    assert_eq!(attacked.surrogate, "surrogate");
    assert_eq!(report.target, "target");
    assert_eq!(report.dataset_digest, ds.digest());
}

#[test]
fn filtering_keeps_exactly_the_clean_correct_images() {
    let ds = small_dataset(4, 5);
    let defender = fresh_defender(3);
    let target = fresh_classifier("target", 9);
    let expected = clean_correct_count(&ds, &target);
    assert!(
        expected > 0,
        "fixture seed gives an all-wrong classifier, pick another seed"
    );
    let modes = vec![ModeSpec {
        name: "undefended".to_string(),
        cfg: defense(SaccadeMode::Passthrough, 3, 7),
    }];
    let report = evaluate(
        &ds,
        &[],
        &defender,
        &modes,
        &target,
        &EvalOptions::default(),
    )
    .unwrap();
    assert_eq!(report.sample_count, expected);
    assert!(report.filtered_to_clean_correct);
    // Passthrough on clean-correct images is correct by construction.
    let row = report.find_row("clean", 0.0, "undefended").unwrap();
    assert_eq!(row.accuracy.correct, expected);
    assert!((row.accuracy.percent - 100.0).abs() < 1e-12);
}

#[test]
fn missing_archive_entries_fail_with_the_image_id() {
    let full = small_dataset(2, 5);
    // Archive only the first image of each class.
    let half = Dataset {
        classes: full.classes.clone(),
        samples: full
            .samples
            .iter()
            .filter(|s| s.id % 2 == 0)
            .cloned()
            .collect(),
    };
    let surrogate = fresh_classifier("surrogate", 7);
    let dir = tempdir().unwrap();
    let attack = AttackInfo::mi_fgsm(0.03, 0.01, 2, 1.0);
    let archive = generate_archive(&surrogate, &half, &attack, dir.path()).unwrap();
    archive.validate_against(&full).unwrap();
    let defender = fresh_defender(3);
    let target = fresh_classifier("target", 9);
    let modes = vec![ModeSpec {
        name: "undefended".to_string(),
        cfg: defense(SaccadeMode::Passthrough, 3, 7),
    }];
    let opts = EvalOptions {
        filter_clean_correct: false,
    };
    let err = evaluate(&full, &[archive], &defender, &modes, &target, &opts).unwrap_err();
    assert_eq!(err.exit_code(), 3);
    assert!(err.to_string().contains("id 1"), "{err}");
}

#[test]
fn label_conflicts_are_rejected_before_any_scoring() {
    let ds = small_dataset(1, 5);
    let surrogate = fresh_classifier("surrogate", 7);
    let dir = tempdir().unwrap();
    let attack = AttackInfo::mi_fgsm(0.03, 0.01, 2, 1.0);
    let archive = generate_archive(&surrogate, &ds, &attack, dir.path()).unwrap();
    let mut flipped = small_dataset(1, 5);
    for s in &mut flipped.samples {
        s.label = (s.label + 1) % 10;
    }
    let defender = fresh_defender(3);
    let target = fresh_classifier("target", 9);
    let modes = vec![ModeSpec {
        name: "undefended".to_string(),
        cfg: defense(SaccadeMode::Passthrough, 3, 7),
    }];
    let opts = EvalOptions {
        filter_clean_correct: false,
    };
    let err = evaluate(&flipped, &[archive], &defender, &modes, &target, &opts).unwrap_err();
    assert_eq!(err.exit_code(), 3);
}

#[test]
fn empty_mode_list_is_a_config_error() {
    let ds = small_dataset(1, 5);
    let defender = fresh_defender(3);
    let target = fresh_classifier("target", 9);
    let err = evaluate(
        &ds,
        &[],
        &defender,
        &[],
        &target,
        &EvalOptions::default(),
    )
    .unwrap_err();
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn report_round_trips_through_json() {
    let ds = small_dataset(1, 5);
    let defender = fresh_defender(3);
    let target = fresh_classifier("target", 9);
    let modes = vec![ModeSpec {
        name: "random".to_string(),
        cfg: defense(SaccadeMode::Random, 3, 7),
    }];
    let opts = EvalOptions {
        filter_clean_correct: false,
    };
    let report = evaluate(&ds, &[], &defender, &modes, &target, &opts).unwrap();
    let dir = tempdir().unwrap();
    let path = dir.path().join("report.json");
    report.save(&path).unwrap();
    let back = EvalReport::load(&path).unwrap();
    assert_eq!(back.target, report.target);
    assert_eq!(back.dataset_digest, report.dataset_digest);
    assert_eq!(back.rows.len(), report.rows.len());
    assert_eq!(
        back.rows[0].accuracy.percent,
        report.rows[0].accuracy.percent
    );
}
