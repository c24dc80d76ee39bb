//! Dataset ingestion: class-folder PNG trees to indexed in-memory
//! collections with deterministic ordering.

use std::fs;
use std::path::Path;

use fovdef_core::img::Image;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// One labeled image. The id is stable across re-ingestions of the
/// same tree and seeds the per-image mask substreams downstream.
#[derive(Debug, Clone)]
pub struct Sample {
    pub id: u64,
    pub label: usize,
    pub image: Image,
}

/// An indexed split: class names in sorted order, samples in
/// class-major, filename-sorted order.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub classes: Vec<String>,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    /// Common image dimensions, or a data error if samples disagree.
    pub fn dims(&self) -> Result<(usize, usize, usize)> {
        let first = self
            .samples
            .first()
            .ok_or_else(|| Error::data("dataset is empty"))?;
        let dims = first.image.dim();
        for s in &self.samples {
            if s.image.dim() != dims {
                return Err(Error::data(format!(
                    "sample {} has shape {:?}, expected {:?}",
                    s.id,
                    s.image.dim(),
                    dims
                )));
            }
        }
        Ok(dims)
    }

    /// Content digest over ids, labels, and pixel data. Two datasets
    /// with equal digests contain the same images in the same order,
    /// which is the comparability guard between evaluation reports.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        for class in &self.classes {
            hasher.update(class.as_bytes());
            hasher.update([0]);
        }
        for s in &self.samples {
            hasher.update(s.id.to_le_bytes());
            hasher.update((s.label as u64).to_le_bytes());
            for &d in s.image.shape() {
                hasher.update((d as u64).to_le_bytes());
            }
            for &v in s.image.iter() {
                hasher.update(v.to_le_bytes());
            }
        }
        hex_string(&hasher.finalize())
    }
}

pub(crate) fn hex_string(bytes: &[u8]) -> String {
    let mut out = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

/// Loads a PNG as a 3-channel image in `[0, 1]`.
pub fn load_png(path: &Path) -> Result<Image> {
    let decoded = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    let rgb = decoded.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let mut out = Image::zeros((3, h, w));
    for (x, y, pixel) in rgb.enumerate_pixels() {
        for c in 0..3 {
            out[(c, y as usize, x as usize)] = pixel.0[c] as f64 / 255.0;
        }
    }
    Ok(out)
}

/// Saves a 3-channel image as an 8-bit PNG, rounding to 255ths.
pub fn save_png(path: &Path, image: &Image) -> Result<()> {
    let (c, h, w) = image.dim();
    if c != 3 {
        return Err(Error::config(format!(
            "png export needs 3 channels, got {c}"
        )));
    }
    let mut rgb = image::RgbImage::new(w as u32, h as u32);
    for (x, y, pixel) in rgb.enumerate_pixels_mut() {
        for ch in 0..3 {
            let v = image[(ch, y as usize, x as usize)].clamp(0.0, 1.0);
            pixel.0[ch] = (v * 255.0).round() as u8;
        }
    }
    rgb.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Ingests a class-folder tree: every direct subdirectory of `root`
/// is a class (sorted by name), every `.png` inside it an image
/// (sorted by filename). Returns the dataset plus warnings for empty
/// class folders.
pub fn ingest_dataset(root: &Path, per_class_cap: Option<usize>) -> Result<(Dataset, Vec<String>)> {
    if per_class_cap == Some(0) {
        return Err(Error::config(
            "a per-class cap of 0 would produce an empty split",
        ));
    }
    let mut class_dirs: Vec<_> = fs::read_dir(root)
        .map_err(|e| Error::io(root, e))?
        .collect::<std::io::Result<Vec<_>>>()
        .map_err(|e| Error::io(root, e))?
        .into_iter()
        .filter(|e| e.path().is_dir())
        .map(|e| e.path())
        .collect();
    class_dirs.sort();
    if class_dirs.is_empty() {
        return Err(Error::data(format!(
            "no class folders under {}",
            root.display()
        )));
    }

    let mut dataset = Dataset::default();
    let mut warnings = Vec::new();
    let mut next_id = 0u64;
    let mut expected_dims: Option<(usize, usize, usize)> = None;
    for (label, dir) in class_dirs.iter().enumerate() {
        let class_name = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| format!("class{label}"));
        dataset.classes.push(class_name.clone());
        let mut files: Vec<_> = fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .collect::<std::io::Result<Vec<_>>>()
            .map_err(|e| Error::io(dir, e))?
            .into_iter()
            .map(|e| e.path())
            .filter(|p| {
                p.is_file()
                    && p.extension()
                        .map(|x| x.eq_ignore_ascii_case("png"))
                        .unwrap_or(false)
            })
            .collect();
        files.sort();
        if let Some(cap) = per_class_cap {
            files.truncate(cap);
        }
        if files.is_empty() {
            warnings.push(format!("class folder '{class_name}' contains no png images"));
            continue;
        }
        for path in files {
            let image = load_png(&path)?;
            match expected_dims {
                None => expected_dims = Some(image.dim()),
                Some(dims) if dims != image.dim() => {
                    return Err(Error::data(format!(
                        "{}: shape {:?} does not match the rest of the split {:?}",
                        path.display(),
                        image.dim(),
                        dims
                    )));
                }
                Some(_) => {}
            }
            dataset.samples.push(Sample {
                id: next_id,
                label,
                image,
            });
            next_id += 1;
        }
    }
    if dataset.samples.is_empty() {
        return Err(Error::data(format!(
            "every class folder under {} is empty",
            root.display()
        )));
    }
    Ok((dataset, warnings))
}
