//! Image quality metrics against a reference.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{PatError, Result};
use crate::image::Image;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

pub fn mse(reference: &Image, test: &Image) -> Result<f64> {
    reference.ensure_same_shape(test)?;
    let n = reference.values.len() as f64;
    Ok(reference
        .values
        .iter()
        .zip(test.values.iter())
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        / n)
}

/// Peak signal-to-noise ratio in dB. Identical images give `+inf`.
pub fn psnr(reference: &Image, test: &Image, peak: f64) -> Result<f64> {
    if !(peak > 0.0 && peak.is_finite()) {
        return Err(PatError::InvalidArgument(format!("peak must be positive, got {peak}")));
    }
    let e = mse(reference, test)?;
    if e == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / e).log10())
}

fn gaussian_window() -> Vec<f64> {
    let c = (SSIM_WINDOW / 2) as f64;
    let w: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = w.iter().sum::<f64>();
    w.into_iter().map(|v| v / s).collect()
}

// Separable valid-mode filtering.
fn filter_valid(a: &Array2<f64>, w: &[f64]) -> Array2<f64> {
    let (ny, nx) = a.dim();
    let k = w.len();
    let ox = nx + 1 - k;
    let oy = ny + 1 - k;
    let mut rows = Array2::zeros((ny, ox));
    for iy in 0..ny {
        for ix in 0..ox {
            rows[[iy, ix]] = (0..k).map(|j| w[j] * a[[iy, ix + j]]).sum::<f64>();
        }
    }
    let mut out = Array2::zeros((oy, ox));
    for iy in 0..oy {
        for ix in 0..ox {
            out[[iy, ix]] = (0..k).map(|j| w[j] * rows[[iy + j, ix]]).sum::<f64>();
        }
    }
    out
}

/// Mean structural similarity with an 11x11 Gaussian window over the
/// region where the window fits inside the image.
pub fn ssim(reference: &Image, test: &Image, peak: f64) -> Result<f64> {
    reference.ensure_same_shape(test)?;
    let (ny, nx) = reference.values.dim();
    if nx < SSIM_WINDOW || ny < SSIM_WINDOW {
        return Err(PatError::InvalidArgument(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {nx}x{ny}"
        )));
    }
    if !(peak > 0.0 && peak.is_finite()) {
        return Err(PatError::InvalidArgument(format!("peak must be positive, got {peak}")));
    }
    let w = gaussian_window();
    let a = &reference.values;
    let b = &test.values;
    let mu_a = filter_valid(a, &w);
    let mu_b = filter_valid(b, &w);
    let aa = filter_valid(&(a * a), &w);
    let bb = filter_valid(&(b * b), &w);
    let ab = filter_valid(&(a * b), &w);
    let c1 = (SSIM_K1 * peak).powi(2);
    let c2 = (SSIM_K2 * peak).powi(2);
    let mut total = 0.0;
    for (idx, &ma) in mu_a.indexed_iter() {
        let mb = mu_b[idx];
        let va = aa[idx] - ma * ma;
        let vb = bb[idx] - mb * mb;
        let cov = ab[idx] - ma * mb;
        total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    Ok(total / mu_a.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mse: f64,
    pub psnr: f64,
    pub ssim: f64,
}

/// All metrics with the dynamic range taken from the reference.
pub fn evaluate(reference: &Image, test: &Image) -> Result<MetricReport> {
    let range = reference.max() - reference.min();
    let peak = if range > 0.0 { range } else { 1.0 };
    Ok(MetricReport {
        mse: mse(reference, test)?,
        psnr: psnr(reference, test, peak)?,
        ssim: ssim(reference, test, peak)?,
    })
}
