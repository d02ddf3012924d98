//! Image quality metrics: PSNR and single-scale SSIM, per channel plane and
//! aggregated over a hyperspectral cube.

use alloc::vec::Vec;

use crate::cube::HyperCube;
use crate::error::{CoreError, Result};
use crate::math;

/// PSNR reported for identical images, where the true value is infinite.
pub const PSNR_CAP_DB: f64 = 99.0;

/// SSIM window side length.
pub const SSIM_WINDOW: usize = 11;

/// Standard deviation of the SSIM Gaussian window.
pub const SSIM_SIGMA: f64 = 1.5;

const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

/// Peak signal-to-noise ratio in decibels between two equally sized planes,
/// capped at [`PSNR_CAP_DB`] when the images are identical.
pub fn psnr(a: &[f64], b: &[f64], max_value: f64) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(CoreError::InvalidArgument(alloc::format!(
            "psnr needs equal non-empty planes, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    if !(max_value > 0.0) {
        return Err(CoreError::InvalidArgument(
            "psnr max_value must be positive".into(),
        ));
    }
    let mse = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * math::ln(max_value * max_value / mse) / core::f64::consts::LN_10).min(PSNR_CAP_DB))
}

/// The 11×11 Gaussian window, normalized to sum 1.
fn gaussian_window() -> [f64; SSIM_WINDOW * SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW * SSIM_WINDOW];
    let half = (SSIM_WINDOW / 2) as isize;
    let mut total = 0.0;
    for y in 0..SSIM_WINDOW {
        for x in 0..SSIM_WINDOW {
            let dx = (x as isize - half) as f64;
            let dy = (y as isize - half) as f64;
            let v = math::exp(-(dx * dx + dy * dy) / (2.0 * SSIM_SIGMA * SSIM_SIGMA));
            w[y * SSIM_WINDOW + x] = v;
            total += v;
        }
    }
    for v in &mut w {
        *v /= total;
    }
    w
}

/// Single-scale SSIM between two `width`×`height` planes with dynamic range
/// 1.0, averaged over all valid (fully interior) window positions.
pub fn ssim(a: &[f64], b: &[f64], width: usize, height: usize) -> Result<f64> {
    if a.len() != width * height || b.len() != width * height {
        return Err(CoreError::InvalidArgument(
            "ssim plane sizes do not match the given dimensions".into(),
        ));
    }
    if width < SSIM_WINDOW || height < SSIM_WINDOW {
        return Err(CoreError::InvalidArgument(alloc::format!(
            "ssim needs images of at least {SSIM_WINDOW}×{SSIM_WINDOW}, got {width}×{height}"
        )));
    }
    let window = gaussian_window();
    let c1 = (SSIM_K1 * 1.0) * (SSIM_K1 * 1.0);
    let c2 = (SSIM_K2 * 1.0) * (SSIM_K2 * 1.0);
    let mut total = 0.0;
    let mut count = 0usize;
    for wy in 0..=height - SSIM_WINDOW {
        for wx in 0..=width - SSIM_WINDOW {
            let mut mu_a = 0.0;
            let mut mu_b = 0.0;
            let mut aa = 0.0;
            let mut bb = 0.0;
            let mut ab = 0.0;
            for ky in 0..SSIM_WINDOW {
                let row = (wy + ky) * width + wx;
                for kx in 0..SSIM_WINDOW {
                    let w = window[ky * SSIM_WINDOW + kx];
                    let x = a[row + kx];
                    let y = b[row + kx];
                    mu_a += w * x;
                    mu_b += w * y;
                    aa += w * x * x;
                    bb += w * y * y;
                    ab += w * x * y;
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

/// Quality metrics of one wavelength channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelMetrics {
    pub wavelength_nm: f64,
    pub psnr_db: f64,
    pub ssim: f64,
}

/// Per-channel and aggregate metrics between two compatible cubes.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumMetrics {
    pub channels: Vec<ChannelMetrics>,
    pub mean_psnr_db: f64,
    pub mean_ssim: f64,
}

/// Evaluate PSNR and SSIM on every channel plane of two cubes and average.
pub fn spectrum_metrics(pred: &HyperCube, target: &HyperCube) -> Result<SpectrumMetrics> {
    pred.check_compatible(target)?;
    let mut channels = Vec::with_capacity(pred.n_channels());
    let mut sum_psnr = 0.0;
    let mut sum_ssim = 0.0;
    for c in 0..pred.n_channels() {
        let pa = pred.channel_plane(c)?;
        let pb = target.channel_plane(c)?;
        let p = psnr(&pa, &pb, 1.0)?;
        let s = ssim(&pa, &pb, pred.width(), pred.height())?;
        sum_psnr += p;
        sum_ssim += s;
        channels.push(ChannelMetrics {
            wavelength_nm: pred.wavelengths()[c],
            psnr_db: p,
            ssim: s,
        });
    }
    let n = channels.len() as f64;
    Ok(SpectrumMetrics {
        channels,
        mean_psnr_db: sum_psnr / n,
        mean_ssim: sum_ssim / n,
    })
}
