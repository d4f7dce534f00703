//! Task losses and evaluation metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Frame, VoxelGrid};

/// Weights of the deblurring, denoising and consistency losses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda1: 1.0, lambda2: 1.0, lambda3: 0.1 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if [self.lambda1, self.lambda2, self.lambda3].iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::invalid("loss weights", "all weights must be finite and >= 0"));
        }
        Ok(())
    }
}

fn check_frames(a: &Frame, b: &Frame) -> Result<()> {
    if !a.same_dims(b) {
        return Err(Error::Shape(format!("frames {}x{} vs {}x{}", a.width(), a.height(), b.width(), b.height())));
    }
    Ok(())
}

fn check_grids(a: &VoxelGrid, b: &VoxelGrid) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!("voxel grids {:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

/// Mean absolute difference (deblurring loss).
pub fn l_md(pred: &Frame, truth: &Frame) -> Result<f64> {
    check_frames(pred, truth)?;
    let s: f64 = pred.data().iter().zip(truth.data()).map(|(a, b)| (a - b).abs()).sum();
    Ok(s / pred.data().len() as f64)
}

/// Mean squared difference over all cells (denoising loss).
pub fn l_ed(pred: &VoxelGrid, truth: &VoxelGrid) -> Result<f64> {
    check_grids(pred, truth)?;
    let s: f64 = pred.data().iter().zip(truth.data()).map(|(&a, &b)| (a as f64 - b as f64).powi(2)).sum();
    Ok(s / pred.data().len() as f64)
}

pub fn l_total(md: f64, ed: f64, sc: f64, w: &LossWeights) -> f64 {
    w.lambda1 * md + w.lambda2 * ed + w.lambda3 * sc
}

pub fn mse(pred: &Frame, truth: &Frame) -> Result<f64> {
    check_frames(pred, truth)?;
    let s: f64 = pred.data().iter().zip(truth.data()).map(|(a, b)| (a - b).powi(2)).sum();
    Ok(s / pred.data().len() as f64)
}

/// `10·log10(peak² / MSE)`; identical inputs give `+∞`.
pub fn psnr(pred: &Frame, truth: &Frame, peak: f64) -> Result<f64> {
    let m = mse(pred, truth)?;
    if m == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / m).log10())
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size / 2) as f64;
    let raw: Vec<f64> = (0..size).map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Separable "valid" filtering of a `w×h` image.
fn filter_valid(img: &[f64], w: usize, h: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (ow, oh) = (w - k + 1, h - k + 1);
    let mut horiz = vec![0.0; ow * h];
    for y in 0..h {
        let row = &img[y * w..(y + 1) * w];
        for x in 0..ow {
            horiz[y * ow + x] = taps.iter().zip(&row[x..x + k]).map(|(t, v)| t * v).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps.iter().enumerate().map(|(i, t)| t * horiz[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Windowed SSIM with an 11×11 Gaussian window (σ = 1.5), `K₁ = 0.01`,
/// `K₂ = 0.03`, peak 1, averaged over every window that fits inside the image.
pub fn ssim(pred: &Frame, truth: &Frame) -> Result<f64> {
    check_frames(pred, truth)?;
    let (w, h) = (pred.width(), pred.height());
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::Shape(format!("image {w}x{h} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")));
    }
    let taps = gaussian_taps(SSIM_WINDOW, SSIM_SIGMA);
    let (x, y) = (pred.data(), truth.data());
    let xx: Vec<f64> = x.iter().map(|a| a * a).collect();
    let yy: Vec<f64> = y.iter().map(|a| a * a).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();
    let mu_x = filter_valid(x, w, h, &taps);
    let mu_y = filter_valid(y, w, h, &taps);
    let e_xx = filter_valid(&xx, w, h, &taps);
    let e_yy = filter_valid(&yy, w, h, &taps);
    let e_xy = filter_valid(&xy, w, h, &taps);
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let mut total = 0.0;
    for i in 0..mu_x.len() {
        let (mx, my) = (mu_x[i], mu_y[i]);
        let sxx = e_xx[i] - mx * mx;
        let syy = e_yy[i] - my * my;
        let sxy = e_xy[i] - mx * my;
        let num = (2.0 * (mx * my) + c1) * (2.0 * sxy + c2);
        let den = (mx * mx + my * my + c1) * (sxx + syy + c2);
        total += num / den;
    }
    Ok(total / mu_x.len() as f64)
}

/// Root mean squared cell difference.
pub fn rmse_voxel(pred: &VoxelGrid, truth: &VoxelGrid) -> Result<f64> {
    Ok(l_ed(pred, truth)?.sqrt())
}
