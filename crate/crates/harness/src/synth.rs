//! Synthetic 10-class shape benchmark at 32x32.
//!
//! All classes share the same color statistics: a random tint is drawn
//! per image regardless of class, so only geometry separates the
//! classes and classifiers must rely on spatial features. Contrast
//! varies per image from comfortable to faint, which spreads images
//! across the margin spectrum. Pixels are quantized to 255ths, making
//! in-memory generation and a png round-trip bit-identical.

use std::fs;
use std::path::Path;

use fovdef_core::img::Image;
use fovdef_core::rng::substream;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::{save_png, Dataset, Sample};
use crate::error::{Error, Result};

pub const SIDE: usize = 32;
pub const CHANNELS: usize = 3;
pub const NUM_CLASSES: usize = 10;

const NAMES: [&str; NUM_CLASSES] = [
    "disk", "square", "cross", "triangle", "ring", "hstripes", "vstripes", "checker", "diamond",
    "dotgrid",
];

/// Class folder names. The numeric prefix keeps alphabetical folder
/// order equal to label order, so ingesting a written tree reproduces
/// the in-memory split exactly, ids and labels included.
pub fn class_names() -> Vec<String> {
    NAMES
        .iter()
        .enumerate()
        .map(|(i, s)| format!("{i:02}_{s}"))
        .collect()
}

/// Whether pixel (y, x) belongs to the foreground of `class` given the
/// jittered center, half-size, and stripe phase.
fn foreground(class: usize, y: f64, x: f64, cy: f64, cx: f64, s: f64, phase: f64) -> bool {
    let (dy, dx) = (y - cy, x - cx);
    match class {
        0 => dy * dy + dx * dx <= s * s,
        1 => dy.abs() <= s && dx.abs() <= s,
        2 => (dy.abs() <= s * 0.35 && dx.abs() <= s) || (dx.abs() <= s * 0.35 && dy.abs() <= s),
        3 => {
            // Upward triangle: width grows linearly from apex to base.
            dy >= -s && dy <= s && dx.abs() <= (dy + s) * 0.5
        }
        4 => {
            let r2 = dy * dy + dx * dx;
            r2 <= s * s && r2 >= (0.55 * s) * (0.55 * s)
        }
        5 => ((y + phase) / 4.0).floor() as i64 % 2 == 0,
        6 => ((x + phase) / 4.0).floor() as i64 % 2 == 0,
        7 => (((y + phase) / 4.0).floor() + ((x + phase) / 4.0).floor()) as i64 % 2 == 0,
        8 => dy.abs() + dx.abs() <= s * 1.2,
        9 => {
            let period = 6.0;
            let ry = (y + phase).rem_euclid(period) - period / 2.0;
            let rx = (x + phase).rem_euclid(period) - period / 2.0;
            ry * ry + rx * rx <= 2.25
        }
        _ => false,
    }
}

/// Draws one image of `class` from the caller's stream. Geometry is
/// jittered, the tint is class-independent, and everything lands on
/// the 8-bit grid.
///
/// Contrast is drawn per image with a heavy low end (squared uniform),
/// so the benchmark spans comfortable shapes down to faint ones whose
/// margin is only a few times a typical perturbation budget. That
/// spread is what makes the benchmark sensitive to attacks at all;
/// with uniformly high contrast nothing short of a white-box gradient
/// ever flips a prediction.
pub fn synth_image(class: usize, rng: &mut ChaCha8Rng) -> Image {
    assert!(class < NUM_CLASSES, "class {class} out of range");
    let cy = 15.5 + (rng.random::<f64>() - 0.5) * 6.0;
    let cx = 15.5 + (rng.random::<f64>() - 0.5) * 6.0;
    let s = 8.0 + (rng.random::<f64>() - 0.5) * 4.0;
    let phase = rng.random::<f64>() * 8.0;
    let base = 0.15 + rng.random::<f64>() * 0.15;
    let spread = rng.random::<f64>();
    let gap = 0.12 + spread * spread * 0.40;
    let tint = [
        base + gap + rng.random::<f64>() * 0.10,
        base + gap + rng.random::<f64>() * 0.10,
        base + gap + rng.random::<f64>() * 0.10,
    ];
    let mut out = Image::zeros((CHANNELS, SIDE, SIDE));
    for y in 0..SIDE {
        for x in 0..SIDE {
            let fg = foreground(class, y as f64, x as f64, cy, cx, s, phase);
            let noise = rng.random::<f64>() * 0.10;
            for c in 0..CHANNELS {
                let v = if fg {
                    tint[c] - noise
                } else {
                    base + noise
                };
                out[(c, y, x)] = (v.clamp(0.0, 1.0) * 255.0).round() / 255.0;
            }
        }
    }
    out
}

/// Deterministic in-memory split: `per_class` images for each of the
/// ten classes, ids assigned class-major.
pub fn synth_dataset(per_class: usize, seed: u64) -> Dataset {
    let mut samples = Vec::with_capacity(per_class * NUM_CLASSES);
    let mut id = 0u64;
    for class in 0..NUM_CLASSES {
        for index in 0..per_class {
            let mut rng = substream(seed, class as u64, index as u64);
            samples.push(Sample {
                id,
                label: class,
                image: synth_image(class, &mut rng),
            });
            id += 1;
        }
    }
    Dataset {
        classes: class_names(),
        samples,
    }
}

/// Writes the same split as [`synth_dataset`] to a class-folder png
/// tree, so the file-system and in-memory paths agree bit for bit.
pub fn write_png_tree(root: &Path, per_class: usize, seed: u64) -> Result<usize> {
    if per_class == 0 {
        return Err(Error::config("per-class image count must be positive"));
    }
    let ds = synth_dataset(per_class, seed);
    let mut written = 0usize;
    for sample in &ds.samples {
        let dir = root.join(&ds.classes[sample.label]);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let path = dir.join(format!("img_{:05}.png", sample.id));
        save_png(&path, &sample.image)?;
        written += 1;
    }
    Ok(written)
}
