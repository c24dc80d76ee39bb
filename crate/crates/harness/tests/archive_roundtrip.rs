//! Archive generation and integrity: budget and box invariants on
//! every stored image, bit-exact reload, and mismatch detection.

mod common;

use std::fs;

use fovdef_core::img::linf_distance;
use fovdef_harness::archive::{generate_archive, Archive, ArchiveManifest, AttackInfo};
use tempfile::tempdir;

use common::{fresh_classifier, small_dataset};

#[test]
fn generated_archives_respect_budget_and_box() {
    let ds = small_dataset(2, 5);
    let eps = 8.0 / 255.0;
    let attacks = [
        AttackInfo::mi_fgsm(eps, eps / 4.0, 4, 1.0),
        AttackInfo::pgd(eps, eps / 4.0, 4, true, 31),
        AttackInfo::spsa(eps, eps / 2.0, 2, 0.01, 8, 32),
    ];
    for attack in attacks {
        let dir = tempdir().unwrap();
        let surrogate = fresh_classifier("surrogate", 7);
        let archive = generate_archive(&surrogate, &ds, &attack, dir.path()).unwrap();
        assert_eq!(archive.manifest.entries.len(), ds.len());
        assert_eq!(archive.manifest.surrogate, "surrogate");
        for sample in &ds.samples {
            let entry = archive.entry_for(sample.id).unwrap();
            assert_eq!(entry.label, sample.label);
            let adv = archive.load_image(entry).unwrap();
            let dist = linf_distance(&adv, &sample.image).unwrap();
            assert!(
                dist <= eps + 1e-12,
                "{}: budget exceeded, {dist} > {eps}",
                attack.kind
            );
            assert!(
                adv.iter().all(|&v| (0.0..=1.0).contains(&v)),
                "{}: pixel outside the unit box",
                attack.kind
            );
            if attack.kind == "spsa" {
                assert_eq!(entry.queries, 2 * 8 * 2);
            } else {
                assert_eq!(entry.queries, 0);
            }
        }
    }
}

#[test]
fn reload_is_bit_exact_and_deterministic() {
    let ds = small_dataset(1, 5);
    let attack = AttackInfo::pgd(0.05, 0.02, 3, true, 77);
    let dir_a = tempdir().unwrap();
    let dir_b = tempdir().unwrap();
    let surrogate = fresh_classifier("surrogate", 7);
    let a = generate_archive(&surrogate, &ds, &attack, dir_a.path()).unwrap();
    let b = generate_archive(&surrogate, &ds, &attack, dir_b.path()).unwrap();
    for (ea, eb) in a.manifest.entries.iter().zip(&b.manifest.entries) {
        assert_eq!(ea.sha256, eb.sha256, "same seed must give the same bytes");
        let img_a = a.load_image(ea).unwrap();
        let img_b = b.load_image(eb).unwrap();
        assert_eq!(img_a, img_b);
    }
    let reopened = Archive::open(dir_a.path()).unwrap();
    for entry in &reopened.manifest.entries {
        let x = a.load_image(a.entry_for(entry.id).unwrap()).unwrap();
        let y = reopened.load_image(entry).unwrap();
        assert_eq!(x, y);
    }
}

#[test]
fn tampered_files_are_caught_by_digest() {
    let ds = small_dataset(1, 5);
    let attack = AttackInfo::mi_fgsm(0.03, 0.01, 3, 1.0);
    let dir = tempdir().unwrap();
    let surrogate = fresh_classifier("surrogate", 7);
    let archive = generate_archive(&surrogate, &ds, &attack, dir.path()).unwrap();
    let entry = &archive.manifest.entries[0];
    let path = dir.path().join(&entry.file);
    let mut bytes = fs::read(&path).unwrap();
    bytes[0] ^= 0xFF;
    fs::write(&path, &bytes).unwrap();
    let err = archive.load_image(entry).unwrap_err();
    assert_eq!(err.exit_code(), 3);
    assert!(err.to_string().contains("digest"), "{err}");
}

#[test]
fn validate_against_lists_offending_entries() {
    let ds = small_dataset(1, 5);
    let attack = AttackInfo::mi_fgsm(0.03, 0.01, 2, 1.0);
    let dir = tempdir().unwrap();
    let surrogate = fresh_classifier("surrogate", 7);
    let archive = generate_archive(&surrogate, &ds, &attack, dir.path()).unwrap();
    archive.validate_against(&ds).unwrap();

    // Flip one label and drop one sample from the dataset.
    let mut broken = small_dataset(1, 5);
    broken.samples[0].label = (broken.samples[0].label + 1) % 10;
    let dropped = broken.samples.pop().unwrap();
    let err = archive.validate_against(&broken).unwrap_err();
    let msg = err.to_string();
    assert_eq!(err.exit_code(), 3);
    assert!(msg.contains("id 0"), "missing label conflict: {msg}");
    assert!(
        msg.contains(&format!("id {}", dropped.id)),
        "missing dropped id: {msg}"
    );
}

#[test]
fn shape_mismatch_is_reported() {
    let ds = small_dataset(1, 5);
    let attack = AttackInfo::mi_fgsm(0.03, 0.01, 2, 1.0);
    let dir = tempdir().unwrap();
    let surrogate = fresh_classifier("surrogate", 7);
    let archive = generate_archive(&surrogate, &ds, &attack, dir.path()).unwrap();
    let mut tiny = small_dataset(1, 5);
    for s in &mut tiny.samples {
        s.image = ndarray::Array3::from_elem((3, 16, 16), 0.5);
    }
    let err = archive.validate_against(&tiny).unwrap_err();
    assert!(err.to_string().contains("16x16"), "{err}");
}

#[test]
fn unknown_attack_kind_is_a_config_error() {
    let ds = small_dataset(1, 5);
    let surrogate = fresh_classifier("surrogate", 7);
    let attack = AttackInfo {
        kind: "carlini".to_string(),
        ..AttackInfo::mi_fgsm(0.03, 0.01, 2, 1.0)
    };
    let dir = tempdir().unwrap();
    let err = generate_archive(&surrogate, &ds, &attack, dir.path()).unwrap_err();
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn format_version_is_enforced() {
    let ds = small_dataset(1, 5);
    let attack = AttackInfo::mi_fgsm(0.03, 0.01, 2, 1.0);
    let dir = tempdir().unwrap();
    let surrogate = fresh_classifier("surrogate", 7);
    generate_archive(&surrogate, &ds, &attack, dir.path()).unwrap();
    let manifest_path = dir.path().join(fovdef_harness::archive::MANIFEST_NAME);
    let mut manifest: ArchiveManifest =
        serde_json::from_str(&fs::read_to_string(&manifest_path).unwrap()).unwrap();
    manifest.format_version += 1;
    fs::write(&manifest_path, serde_json::to_string(&manifest).unwrap()).unwrap();
    let err = Archive::open(dir.path()).unwrap_err();
    assert_eq!(err.exit_code(), 3);
    assert!(err.to_string().contains("format version"), "{err}");
}
