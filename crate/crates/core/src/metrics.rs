//! Image-quality metrics over held-out frames.

use crate::error::{Error, Result};
use crate::image::Image;
use crate::losses::depth::{normalize_depth, valid_mask};
use crate::losses::ssim::ssim_images;
use crate::losses::PriorFrame;

pub const PSNR_CAP: f64 = 120.0;
pub const MSE_FLOOR: f64 = 1e-12;

fn same_shape(a: &Image, b: &Image) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Invalid(format!("image shapes differ: {:?} vs {:?}", a.shape(), b.shape())));
    }
    if a.data.is_empty() {
        return Err(Error::Invalid("empty image".into()));
    }
    Ok(())
}

pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    same_shape(a, b)?;
    Ok(a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.data.len() as f64)
}

/// `10·log10(1/MSE)`, capped at 120 dB when the MSE is below 1e-12.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    let m = mse(a, b)?;
    Ok(if m < MSE_FLOOR { PSNR_CAP } else { -10.0 * m.log10() })
}

/// Gaussian-window SSIM, the same definition the photometric loss uses.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    same_shape(a, b)?;
    Ok(ssim_images(&a.data, &b.data, a.width, a.height, a.channels))
}

/// Mean absolute difference between min-max normalized rendered and true
/// depth over the prior's valid pixels. `None` when no pixel is valid.
pub fn depth_mae(rendered: &Image, truth: &Image, prior: &PriorFrame) -> Result<Option<f64>> {
    same_shape(rendered, truth)?;
    let valid = valid_mask(prior);
    if valid.mask.len() != rendered.data.len() {
        return Err(Error::Invalid("prior and depth shapes differ".into()));
    }
    if valid.count() == 0 {
        return Ok(None);
    }
    let a = normalize_depth(&rendered.data, &valid.mask);
    let b = normalize_depth(&truth.data, &valid.mask);
    let sum: f64 = valid.mask.iter().enumerate().filter(|(_, m)| **m).map(|(i, _)| (a.values[i] - b.values[i]).abs()).sum();
    Ok(Some(sum / valid.count() as f64))
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameScore {
    pub frame: usize,
    pub psnr: f64,
    pub ssim: f64,
}

pub fn mean_scores(rows: &[FrameScore]) -> (f64, f64) {
    let n = rows.len().max(1) as f64;
    (rows.iter().map(|r| r.psnr).sum::<f64>() / n, rows.iter().map(|r| r.ssim).sum::<f64>() / n)
}

/// `frame,psnr,ssim` rows followed by a `mean` row.
pub fn scores_csv(rows: &[FrameScore]) -> String {
    let mut out = String::from("frame,psnr,ssim\n");
    for r in rows {
        out.push_str(&format!("{},{:.6},{:.8}\n", r.frame, r.psnr, r.ssim));
    }
    let (p, s) = mean_scores(rows);
    out.push_str(&format!("mean,{p:.6},{s:.8}\n"));
    out
}
