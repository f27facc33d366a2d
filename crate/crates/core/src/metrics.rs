//! Evaluation metrics: mask Dice loss and MSE, PSNR/SSIM over white-matted
//! RGB, and relative depth errors.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::depth::PseudoDepthMap;
use crate::image::{Mask, RgbaImage};

pub const PSNR_CAP: f64 = 100.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
pub const DEPTH_EPS: f64 = 0.01;
pub const DELTA1_THRESHOLD: f64 = 1.25;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("no pixel is valid in both depth maps")]
    NoOverlap,
}

fn mismatch(a: (u32, u32), b: (u32, u32)) -> MetricError {
    MetricError::DimensionMismatch(format!("{}x{} vs {}x{}", a.0, a.1, b.0, b.1))
}

/// `1 - 2|a∩b| / (|a|+|b|)`, zero when both masks are empty.
pub fn dice_loss(a: &Mask, b: &Mask) -> Result<f64, MetricError> {
    if !a.same_size(b) {
        return Err(mismatch((a.width, a.height), (b.width, b.height)));
    }
    let inter = a
        .bits
        .iter()
        .zip(&b.bits)
        .filter(|(x, y)| **x && **y)
        .count();
    let total = a.count() + b.count();
    if total == 0 {
        return Ok(0.0);
    }
    Ok(1.0 - 2.0 * inter as f64 / total as f64)
}

/// Mean squared difference of two soft masks (alpha maps).
pub fn mask_mse(a: &[f32], b: &[f32]) -> Result<f64, MetricError> {
    if a.len() != b.len() {
        return Err(MetricError::DimensionMismatch(format!(
            "{} vs {} values",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Ok(0.0);
    }
    let s: f64 = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
        .sum();
    Ok(s / a.len() as f64)
}

/// PSNR with peak 1 over RGB channels after compositing on white, capped at
/// [`PSNR_CAP`].
pub fn psnr(x: &RgbaImage, y: &RgbaImage) -> Result<f64, MetricError> {
    if !x.same_size(y) {
        return Err(mismatch((x.width, x.height), (y.width, y.height)));
    }
    let (a, b) = (x.matte_white(), y.matte_white());
    if a.is_empty() {
        return Ok(PSNR_CAP);
    }
    let mut se = 0.0f64;
    for (p, q) in a.iter().zip(&b) {
        for c in 0..3 {
            se += (p[c] as f64 - q[c] as f64).powi(2);
        }
    }
    let mse = se / (a.len() * 3) as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((-10.0 * mse.log10()).min(PSNR_CAP))
}

/// Normalized 1-D Gaussian of `size` taps centered on the window.
fn gaussian_window(size: usize) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let g: Vec<f64> = (0..size)
        .map(|i| (-(i as f64 - c).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Separable "valid" filtering: output is (h-n+1) x (w-n+1).
fn filter_valid(data: &[f64], w: usize, h: usize, g: &[f64]) -> Vec<f64> {
    let n = g.len();
    let (ow, oh) = (w - n + 1, h - n + 1);
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..n).map(|k| g[k] * data[y * w + x + k]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|k| g[k] * rows[(y + k) * ow + x]).sum();
        }
    }
    out
}

fn ssim_channel(a: &[f64], b: &[f64], w: usize, h: usize, g: &[f64]) -> f64 {
    let c1 = (SSIM_K1 * 1.0).powi(2);
    let c2 = (SSIM_K2 * 1.0).powi(2);
    let mu_a = filter_valid(a, w, h, g);
    let mu_b = filter_valid(b, w, h, g);
    let prod = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(x, y)| x * y).collect::<Vec<_>>();
    let aa = filter_valid(&prod(a, a), w, h, g);
    let bb = filter_valid(&prod(b, b), w, h, g);
    let ab = filter_valid(&prod(a, b), w, h, g);
    let n = mu_a.len();
    let mut total = 0.0;
    for i in 0..n {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = aa[i] - ma * ma;
        let vb = bb[i] - mb * mb;
        let cov = ab[i] - ma * mb;
        total +=
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    total / n as f64
}

/// Mean SSIM over RGB channels after compositing on white. The Gaussian
/// window is 11x11 (sigma 1.5), shrunk to the smaller image side when the
/// image is narrower; only fully-inside window positions count.
pub fn ssim(x: &RgbaImage, y: &RgbaImage) -> Result<f64, MetricError> {
    if !x.same_size(y) {
        return Err(mismatch((x.width, x.height), (y.width, y.height)));
    }
    let (w, h) = (x.width as usize, x.height as usize);
    if w == 0 || h == 0 {
        return Ok(1.0);
    }
    let g = gaussian_window(SSIM_WINDOW.min(w).min(h));
    let (a, b) = (x.matte_white(), y.matte_white());
    let mut sum = 0.0;
    for c in 0..3 {
        let pa: Vec<f64> = a.iter().map(|p| p[c] as f64).collect();
        let pb: Vec<f64> = b.iter().map(|p| p[c] as f64).collect();
        sum += ssim_channel(&pa, &pb, w, h, &g);
    }
    Ok((sum / 3.0).clamp(-1.0, 1.0))
}

pub fn psnr_ssim(x: &RgbaImage, y: &RgbaImage) -> Result<(f64, f64), MetricError> {
    Ok((psnr(x, y)?, ssim(x, y)?))
}

/// `(absrel, delta1)` over pixels valid in both maps, with both depths
/// shifted by [`DEPTH_EPS`].
pub fn metric_depth(pred: &PseudoDepthMap, gt: &PseudoDepthMap) -> Result<(f64, f64), MetricError> {
    if pred.width != gt.width || pred.height != gt.height {
        return Err(mismatch((pred.width, pred.height), (gt.width, gt.height)));
    }
    let (mut n, mut rel, mut good) = (0usize, 0.0f64, 0usize);
    for p in 0..gt.depth.len() {
        let (Some(d), Some(t)) = (pred.get(p), gt.get(p)) else {
            continue;
        };
        let (d, t) = (d as f64, t as f64);
        n += 1;
        rel += (d - t).abs() / (t + DEPTH_EPS);
        let ratio = ((d + DEPTH_EPS) / (t + DEPTH_EPS)).max((t + DEPTH_EPS) / (d + DEPTH_EPS));
        if ratio < DELTA1_THRESHOLD {
            good += 1;
        }
    }
    if n == 0 {
        return Err(MetricError::NoOverlap);
    }
    Ok((rel / n as f64, good as f64 / n as f64))
}

/// Metrics of one evaluation; fields that were not computed are omitted.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub psnr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ssim: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mask_dice_loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mask_mse: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub absrel: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta1: Option<f64>,
}
