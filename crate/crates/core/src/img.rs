//! Image tensors and small pixel-space helpers.

use ndarray::Array3;

use crate::error::{Error, Result};

/// Dense image in channel-first layout `(channels, height, width)` with
/// values in `[0, 1]`.
pub type Image = Array3<f64>;

/// Channel/height/width of an image.
pub fn dims(img: &Image) -> (usize, usize, usize) {
    let d = img.dim();
    (d.0, d.1, d.2)
}

/// Clamps every value into `[0, 1]` in place.
pub fn clamp01(img: &mut Image) {
    img.mapv_inplace(|v| v.clamp(0.0, 1.0));
}

/// L-infinity distance between two images of identical shape.
pub fn linf_distance(a: &Image, b: &Image) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::bounds(format!(
            "shape mismatch: {:?} vs {:?}",
            a.dim(),
            b.dim()
        )));
    }
    let mut m = 0.0f64;
    for (x, y) in a.iter().zip(b.iter()) {
        m = m.max((x - y).abs());
    }
    Ok(m)
}

/// Mean squared error over all channels and pixels.
pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::bounds(format!(
            "shape mismatch: {:?} vs {:?}",
            a.dim(),
            b.dim()
        )));
    }
    let n = a.len() as f64;
    let sum: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(sum / n)
}
