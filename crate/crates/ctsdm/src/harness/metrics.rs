//! Image quality metrics: PSNR and SSIM.

use crate::error::{Error, Result};
use crate::geometry::Image;

/// Peak signal-to-noise ratio in decibels: `10·log10(range² / MSE)`.
/// Identical images (MSE = 0) report `f64::INFINITY`.
pub fn psnr(a: &Image, b: &Image, data_range: f64) -> Result<f64> {
    if a.size() != b.size() {
        return Err(Error::DimensionMismatch(format!(
            "psnr inputs are {0}×{0} and {1}×{1}",
            a.size(),
            b.size()
        )));
    }
    if !(data_range > 0.0) {
        return Err(Error::InvalidArgument("data range must be positive".into()));
    }
    let n = a.data().len() as f64;
    let mse: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / n;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (data_range * data_range / mse).log10())
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

/// Structural similarity over an 11×11 Gaussian window (σ = 1.5),
/// K1 = 0.01, K2 = 0.03, data range 1. The mean is taken over positions
/// where the window fits entirely inside both images.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    if a.size() != b.size() {
        return Err(Error::DimensionMismatch(format!(
            "ssim inputs are {0}×{0} and {1}×{1}",
            a.size(),
            b.size()
        )));
    }
    let n = a.size();
    if n < SSIM_WINDOW {
        return Err(Error::InvalidArgument(format!(
            "ssim needs images of at least {SSIM_WINDOW}×{SSIM_WINDOW}"
        )));
    }
    let w = gaussian_window();
    let half = SSIM_WINDOW / 2;
    let c1 = (SSIM_K1 * 1.0f64).powi(2);
    let c2 = (SSIM_K2 * 1.0f64).powi(2);

    let mut total = 0.0;
    let mut count = 0usize;
    for row in half..n - half {
        for col in half..n - half {
            let mut mu_a = 0.0;
            let mut mu_b = 0.0;
            let mut aa = 0.0;
            let mut bb = 0.0;
            let mut ab = 0.0;
            for dy in 0..SSIM_WINDOW {
                for dx in 0..SSIM_WINDOW {
                    let weight = w[dy] * w[dx];
                    let x = a.get(row + dy - half, col + dx - half);
                    let y = b.get(row + dy - half, col + dx - half);
                    mu_a += weight * x;
                    mu_b += weight * y;
                    aa += weight * x * x;
                    bb += weight * y * y;
                    ab += weight * x * y;
                }
            }
            let var_a = aa - mu_a * mu_a;
            let var_b = bb - mu_b * mu_b;
            let cov = ab - mu_a * mu_b;
            let num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2);
            let den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2);
            total += num / den;
            count += 1;
        }
    }
    Ok(total / count as f64)
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let half = (SSIM_WINDOW / 2) as f64;
    let mut w = [0.0; SSIM_WINDOW];
    let mut sum = 0.0;
    for (i, wi) in w.iter_mut().enumerate() {
        let x = i as f64 - half;
        *wi = (-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *wi;
    }
    for wi in w.iter_mut() {
        *wi /= sum;
    }
    w
}
