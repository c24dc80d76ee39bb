//! Structural similarity with an analytic gradient.
//!
//! Single-scale SSIM with an 11-tap Gaussian window (sigma 1.5),
//! stability constants from K1 = 0.01 and K2 = 0.03 at unit dynamic
//! range, evaluated over valid window positions only and averaged over
//! positions and channels. The forward pass uses separable filtering;
//! the backward pass scatters the per-window statistic gradients back
//! through the same window weights.

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::img::Image;

pub const WINDOW: usize = 11;
pub const SIGMA: f64 = 1.5;
pub const C1: f64 = 1e-4; // (0.01 * 1.0)^2
pub const C2: f64 = 9e-4; // (0.03 * 1.0)^2

/// Normalized 11-tap Gaussian window.
pub fn gaussian_window() -> [f64; WINDOW] {
    let mut w = [0.0; WINDOW];
    let center = (WINDOW / 2) as f64;
    let mut sum = 0.0;
    for (k, slot) in w.iter_mut().enumerate() {
        let d = k as f64 - center;
        *slot = (-d * d / (2.0 * SIGMA * SIGMA)).exp();
        sum += *slot;
    }
    for slot in w.iter_mut() {
        *slot /= sum;
    }
    w
}

/// Valid-mode separable correlation with the Gaussian window: output
/// position `(y, x)` holds the window-weighted sum of the 11x11 patch
/// anchored there.
fn filter_valid(img: &ArrayView2<f64>, w: &[f64; WINDOW]) -> Array2<f64> {
    let (h, wd) = img.dim();
    let (hv, wv) = (h - WINDOW + 1, wd - WINDOW + 1);
    let mut tmp = Array2::<f64>::zeros((h, wv));
    for y in 0..h {
        for xv in 0..wv {
            let mut acc = 0.0;
            for (j, &wj) in w.iter().enumerate() {
                acc += wj * img[[y, xv + j]];
            }
            tmp[[y, xv]] = acc;
        }
    }
    let mut out = Array2::<f64>::zeros((hv, wv));
    for yv in 0..hv {
        for xv in 0..wv {
            let mut acc = 0.0;
            for (i, &wi) in w.iter().enumerate() {
                acc += wi * tmp[[yv + i, xv]];
            }
            out[[yv, xv]] = acc;
        }
    }
    out
}

/// Adjoint of `filter_valid`: scatters window-space gradients back to
/// pixel space.
fn scatter_valid(d: &Array2<f64>, full: (usize, usize), w: &[f64; WINDOW]) -> Array2<f64> {
    let (h, wd) = full;
    let (hv, wv) = d.dim();
    debug_assert_eq!((hv, wv), (h - WINDOW + 1, wd - WINDOW + 1));
    let mut tmp = Array2::<f64>::zeros((h, wv));
    for yv in 0..hv {
        for xv in 0..wv {
            let g = d[[yv, xv]];
            if g == 0.0 {
                continue;
            }
            for (i, &wi) in w.iter().enumerate() {
                tmp[[yv + i, xv]] += wi * g;
            }
        }
    }
    let mut out = Array2::<f64>::zeros((h, wd));
    for y in 0..h {
        for xv in 0..wv {
            let g = tmp[[y, xv]];
            if g == 0.0 {
                continue;
            }
            for (j, &wj) in w.iter().enumerate() {
                out[[y, xv + j]] += wj * g;
            }
        }
    }
    out
}

fn check_shapes(a: &Image, b: &Image) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::bounds(format!(
            "similarity operands differ in shape: {:?} vs {:?}",
            a.dim(),
            b.dim()
        )));
    }
    let (_, h, w) = a.dim();
    if h < WINDOW || w < WINDOW {
        return Err(Error::bounds(format!(
            "image {h}x{w} is smaller than the {WINDOW}x{WINDOW} window"
        )));
    }
    Ok(())
}

/// Mean structural similarity between two images, averaged over all
/// valid window positions and channels. Identical images score 1.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    check_shapes(a, b)?;
    let w = gaussian_window();
    let (c, _, _) = a.dim();
    let mut total = 0.0;
    let mut count = 0usize;
    for ch in 0..c {
        let av = a.index_axis(ndarray::Axis(0), ch);
        let bv = b.index_axis(ndarray::Axis(0), ch);
        let mu_a = filter_valid(&av, &w);
        let mu_b = filter_valid(&bv, &w);
        let s_aa = filter_valid(&av.mapv(|v| v * v).view(), &w);
        let s_bb = filter_valid(&bv.mapv(|v| v * v).view(), &w);
        let s_ab = filter_valid(&(&av.to_owned() * &bv).view(), &w);
        for ((idx, &ma), &mb) in mu_a.indexed_iter().zip(mu_b.iter()) {
            let va = s_aa[idx] - ma * ma;
            let vb = s_bb[idx] - mb * mb;
            let cov = s_ab[idx] - ma * mb;
            let s = ((2.0 * ma * mb + C1) * (2.0 * cov + C2))
                / ((ma * ma + mb * mb + C1) * (va + vb + C2));
            total += s;
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Mean SSIM and its gradient with respect to the first image.
pub fn ssim_with_grad(a: &Image, b: &Image) -> Result<(f64, Image)> {
    check_shapes(a, b)?;
    let w = gaussian_window();
    let (c, h, wd) = a.dim();
    let (hv, wv) = (h - WINDOW + 1, wd - WINDOW + 1);
    let norm = 1.0 / (c * hv * wv) as f64;
    let mut total = 0.0;
    let mut grad = Image::zeros((c, h, wd));
    for ch in 0..c {
        let av = a.index_axis(ndarray::Axis(0), ch).to_owned();
        let bv = b.index_axis(ndarray::Axis(0), ch).to_owned();
        let mu_a = filter_valid(&av.view(), &w);
        let mu_b = filter_valid(&bv.view(), &w);
        let s_aa = filter_valid(&av.mapv(|v| v * v).view(), &w);
        let s_bb = filter_valid(&bv.mapv(|v| v * v).view(), &w);
        let s_ab = filter_valid(&(&av * &bv).view(), &w);
        let mut d_mu_a = Array2::<f64>::zeros((hv, wv));
        let mut d_s_aa = Array2::<f64>::zeros((hv, wv));
        let mut d_s_ab = Array2::<f64>::zeros((hv, wv));
        for yv in 0..hv {
            for xv in 0..wv {
                let (ma, mb) = (mu_a[[yv, xv]], mu_b[[yv, xv]]);
                let va = s_aa[[yv, xv]] - ma * ma;
                let vb = s_bb[[yv, xv]] - mb * mb;
                let cov = s_ab[[yv, xv]] - ma * mb;
                let a1 = 2.0 * ma * mb + C1;
                let a2 = 2.0 * cov + C2;
                let b1 = ma * ma + mb * mb + C1;
                let b2 = va + vb + C2;
                let s = (a1 * a2) / (b1 * b2);
                total += s;
                // Window-statistic partials of s, each scaled by the
                // final mean normalization.
                d_s_aa[[yv, xv]] = -s / b2 * norm;
                d_s_ab[[yv, xv]] = 2.0 * a1 / (b1 * b2) * norm;
                d_mu_a[[yv, xv]] = (2.0 * mb * (a2 - a1) / (b1 * b2)
                    - 2.0 * ma * s * (1.0 / b1 - 1.0 / b2))
                    * norm;
            }
        }
        // Chain through mu_a = W*a, s_aa = W*(a^2), s_ab = W*(a*b).
        let mut d_pixel = scatter_valid(&d_mu_a, (h, wd), &w);
        let from_aa = scatter_valid(&d_s_aa, (h, wd), &w);
        let from_ab = scatter_valid(&d_s_ab, (h, wd), &w);
        d_pixel = d_pixel + from_aa * 2.0 * &av + from_ab * &bv;
        grad.index_axis_mut(ndarray::Axis(0), ch).assign(&d_pixel);
    }
    Ok((total * norm, grad))
}
