//! Image-quality metrics on `[0, 1]` images, accumulated in f64.

use ndarray::{s, Array2, Array4, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SplError};

pub const MSE_FLOOR: f64 = 1e-12;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricTriple {
    pub psnr: f64,
    pub ssim: f64,
    pub mae: f64,
}

fn check(reference: &Array4<f32>, candidate: &Array4<f32>) -> Result<()> {
    if reference.dim() != candidate.dim() {
        return Err(SplError::Dimension(format!(
            "metric inputs differ in shape: {:?} vs {:?}",
            reference.dim(),
            candidate.dim()
        )));
    }
    if reference.is_empty() {
        return Err(SplError::Dimension("metric inputs are empty".into()));
    }
    Ok(())
}

pub fn mae(reference: &Array4<f32>, candidate: &Array4<f32>) -> Result<f64> {
    check(reference, candidate)?;
    let sum: f64 = reference
        .iter()
        .zip(candidate)
        .map(|(&a, &b)| (a as f64 - b as f64).abs())
        .sum();
    Ok(sum / reference.len() as f64)
}

pub fn mse(reference: &Array4<f32>, candidate: &Array4<f32>) -> Result<f64> {
    check(reference, candidate)?;
    let sum: f64 = reference
        .iter()
        .zip(candidate)
        .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
        .sum();
    Ok(sum / reference.len() as f64)
}

/// `10·log10(1 / max(MSE, 1e-12))`; identical inputs give 120 dB.
pub fn psnr(reference: &Array4<f32>, candidate: &Array4<f32>) -> Result<f64> {
    Ok(psnr_from_mse(mse(reference, candidate)?))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    10.0 * (1.0 / mse.max(MSE_FLOOR)).log10()
}

/// Normalized 1-D Gaussian taps.
pub fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Valid-mode separable filtering of one plane.
fn filter_valid(plane: &ArrayView2<f64>, taps: &[f64]) -> Array2<f64> {
    let (h, w) = plane.dim();
    let k = taps.len();
    let (oh, ow) = (h + 1 - k, w + 1 - k);
    let mut rows = Array2::<f64>::zeros((h, ow));
    for y in 0..h {
        for x in 0..ow {
            rows[[y, x]] = (0..k).map(|i| taps[i] * plane[[y, x + i]]).sum();
        }
    }
    let mut out = Array2::<f64>::zeros((oh, ow));
    for y in 0..oh {
        for x in 0..ow {
            out[[y, x]] = (0..k).map(|i| taps[i] * rows[[y + i, x]]).sum();
        }
    }
    out
}

fn ssim_plane(a: ArrayView2<f64>, b: ArrayView2<f64>, taps: &[f64]) -> f64 {
    let mu_a = filter_valid(&a, taps);
    let mu_b = filter_valid(&b, taps);
    let aa = filter_valid(&(&a * &a).view(), taps);
    let bb = filter_valid(&(&b * &b).view(), taps);
    let ab = filter_valid(&(&a * &b).view(), taps);
    let mut total = 0.0;
    for (idx, &ma) in mu_a.indexed_iter() {
        let mb = mu_b[idx];
        let var_a = aa[idx] - ma * ma;
        let var_b = bb[idx] - mb * mb;
        let cov = ab[idx] - ma * mb;
        total += ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2))
            / ((ma * ma + mb * mb + SSIM_C1) * (var_a + var_b + SSIM_C2));
    }
    total / mu_a.len() as f64
}

/// Single-scale SSIM with an 11×11 Gaussian window (σ = 1.5), averaged over
/// valid window positions, channels and batch items.
pub fn ssim(reference: &Array4<f32>, candidate: &Array4<f32>) -> Result<f64> {
    check(reference, candidate)?;
    let (n, c, h, w) = reference.dim();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(SplError::Config(format!(
            "SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}"
        )));
    }
    let taps = gaussian_taps(SSIM_WINDOW, SSIM_SIGMA);
    let a = reference.mapv(f64::from);
    let b = candidate.mapv(f64::from);
    let mut total = 0.0;
    for i in 0..n {
        for ch in 0..c {
            total += ssim_plane(a.slice(s![i, ch, .., ..]), b.slice(s![i, ch, .., ..]), &taps);
        }
    }
    Ok(total / (n * c) as f64)
}

pub fn metric_triple(reference: &Array4<f32>, candidate: &Array4<f32>) -> Result<MetricTriple> {
    Ok(MetricTriple {
        psnr: psnr(reference, candidate)?,
        ssim: ssim(reference, candidate)?,
        mae: mae(reference, candidate)?,
    })
}
