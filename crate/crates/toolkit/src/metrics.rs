use serde::{Deserialize, Serialize};
use surfelsplat_core::ssim::ssim;
use surfelsplat_core::Image;

use crate::error::Result;

/// Reported for identical images instead of +∞.
pub const PSNR_CAP_DB: f64 = 99.0;

const MSE_FLOOR: f64 = 1e-10;

/// Peak signal-to-noise ratio in dB for images in `[0, 1]`.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    a.ensure_same_shape(b)?;
    let n = a.data().len() as f64;
    let mse = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n;
    if mse < MSE_FLOOR {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub psnr: f64,
    pub ssim: f64,
}

impl MetricsReport {
    pub fn compare(a: &Image, b: &Image) -> Result<Self> {
        Ok(Self { psnr: psnr(a, b)?, ssim: ssim(a, b)? })
    }

    /// Arithmetic mean over images (PSNR averaged in dB, as is customary).
    pub fn mean(reports: &[MetricsReport]) -> Option<Self> {
        if reports.is_empty() {
            return None;
        }
        let n = reports.len() as f64;
        Some(Self {
            psnr: reports.iter().map(|r| r.psnr).sum::<f64>() / n,
            ssim: reports.iter().map(|r| r.ssim).sum::<f64>() / n,
        })
    }
}
