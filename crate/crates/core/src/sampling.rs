//! Foveal-peripheral retention masks.
//!
//! The image is partitioned into a `grid_n x grid_n` grid of equally
//! sized patches. One patch (the fovea) is kept at full resolution;
//! every pixel outside it is retained independently with a small
//! probability. A fresh mask is drawn for every glimpse from its own
//! RNG substream, so sequences are reproducible per `(seed, image id,
//! glimpse counter)`.

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::img::Image;
use crate::rng::substream;

/// Grid partition of an image into `grid_n * grid_n` candidate fovea
/// patches. Patch index runs row-major: `index = row * grid_n + col`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSpec {
    pub image_height: usize,
    pub image_width: usize,
    pub grid_n: usize,
    pub patch_height: usize,
    pub patch_width: usize,
}

impl GridSpec {
    pub fn new(image_height: usize, image_width: usize, grid_n: usize) -> Result<Self> {
        if image_height == 0 || image_width == 0 || grid_n == 0 {
            return Err(Error::config(format!(
                "grid requires positive dimensions, got {image_height}x{image_width} with grid_n {grid_n}"
            )));
        }
        if image_height % grid_n != 0 {
            return Err(Error::config(format!(
                "image height {image_height} is not divisible by grid_n {grid_n}"
            )));
        }
        if image_width % grid_n != 0 {
            return Err(Error::config(format!(
                "image width {image_width} is not divisible by grid_n {grid_n}"
            )));
        }
        Ok(GridSpec {
            image_height,
            image_width,
            grid_n,
            patch_height: image_height / grid_n,
            patch_width: image_width / grid_n,
        })
    }

    /// Size of the fovea-position action space.
    pub fn num_actions(&self) -> usize {
        self.grid_n * self.grid_n
    }

    /// Pixel extent `(row0, col0, row1, col1)` of a patch; the upper
    /// bounds are exclusive.
    pub fn patch_rect(&self, index: usize) -> Result<(usize, usize, usize, usize)> {
        if index >= self.num_actions() {
            return Err(Error::bounds(format!(
                "foveal index {index} out of range for {} actions",
                self.num_actions()
            )));
        }
        let row = index / self.grid_n;
        let col = index % self.grid_n;
        let r0 = row * self.patch_height;
        let c0 = col * self.patch_width;
        Ok((r0, c0, r0 + self.patch_height, c0 + self.patch_width))
    }
}

/// Mask-generation parameters: peripheral retention probability and the
/// RNG seed that anchors all mask substreams.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleConfig {
    pub peripheral_prob: f64,
    pub seed: u64,
}

impl SampleConfig {
    pub fn new(peripheral_prob: f64, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&peripheral_prob) {
            return Err(Error::config(format!(
                "peripheral probability must lie in [0, 1], got {peripheral_prob}"
            )));
        }
        Ok(SampleConfig {
            peripheral_prob,
            seed,
        })
    }
}

/// Binary retention mask. Every pixel of the foveal patch is 1; each
/// peripheral pixel is 1 with the configured probability.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleMask {
    pub bits: Array2<u8>,
    pub foveal_index: usize,
}

impl SampleMask {
    /// Number of retained pixels.
    pub fn ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b == 1).count()
    }
}

/// A masked view of an image: the pixelwise product plus the mask
/// itself, which downstream models receive as an extra channel so they
/// can tell "black" from "unsampled".
#[derive(Debug, Clone)]
pub struct Glimpse {
    pub masked_image: Image,
    pub mask: SampleMask,
}

impl Glimpse {
    /// Stacks the masked image and the mask channel into the
    /// `(channels + 1, H, W)` tensor the reconstructor consumes.
    pub fn to_input(&self) -> Image {
        let (c, h, w) = self.masked_image.dim();
        let mut out = Image::zeros((c + 1, h, w));
        out.slice_mut(ndarray::s![..c, .., ..])
            .assign(&self.masked_image);
        for y in 0..h {
            for x in 0..w {
                out[[c, y, x]] = f64::from(self.mask.bits[[y, x]]);
            }
        }
        out
    }
}

/// Builds the grid partition, rejecting non-divisible dimensions.
pub fn make_grid(height: usize, width: usize, grid_n: usize) -> Result<GridSpec> {
    GridSpec::new(height, width, grid_n)
}

/// Draws one retention mask for the given fovea position.
///
/// Peripheral pixels are independent Bernoulli draws from the substream
/// keyed by `(cfg.seed, image_id, glimpse_idx)`; the fovea is always
/// fully retained. Identical keys reproduce bit-identical masks.
pub fn sample_mask(
    grid: &GridSpec,
    foveal_index: usize,
    cfg: &SampleConfig,
    image_id: u64,
    glimpse_idx: u64,
) -> Result<SampleMask> {
    let (r0, c0, r1, c1) = grid.patch_rect(foveal_index)?;
    let mut rng = substream(cfg.seed, image_id, glimpse_idx);
    let mut bits = Array2::<u8>::zeros((grid.image_height, grid.image_width));
    for y in 0..grid.image_height {
        for x in 0..grid.image_width {
            let in_fovea = y >= r0 && y < r1 && x >= c0 && x < c1;
            bits[[y, x]] = if in_fovea {
                1
            } else if rng.random::<f64>() < cfg.peripheral_prob {
                1
            } else {
                0
            };
        }
    }
    Ok(SampleMask { bits, foveal_index })
}

/// Applies a mask to an image, producing the glimpse.
pub fn apply_mask(image: &Image, mask: &SampleMask) -> Result<Glimpse> {
    let (c, h, w) = image.dim();
    let (mh, mw) = mask.bits.dim();
    if (h, w) != (mh, mw) {
        return Err(Error::bounds(format!(
            "mask shape {mh}x{mw} does not match image {h}x{w}"
        )));
    }
    let mut masked = Image::zeros((c, h, w));
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                masked[[ch, y, x]] = image[[ch, y, x]] * f64::from(mask.bits[[y, x]]);
            }
        }
    }
    Ok(Glimpse {
        masked_image: masked,
        mask: mask.clone(),
    })
}

/// Generates one glimpse per fovea index, each with an independently
/// drawn mask (fresh substream per glimpse counter).
pub fn glimpse_sequence(
    image: &Image,
    fovea_indices: &[usize],
    grid: &GridSpec,
    cfg: &SampleConfig,
    image_id: u64,
) -> Result<Vec<Glimpse>> {
    if fovea_indices.is_empty() {
        return Err(Error::config("glimpse sequence requires at least one fovea index"));
    }
    let mut out = Vec::with_capacity(fovea_indices.len());
    for (t, &idx) in fovea_indices.iter().enumerate() {
        let mask = sample_mask(grid, idx, cfg, image_id, t as u64)?;
        out.push(apply_mask(image, &mask)?);
    }
    Ok(out)
}
