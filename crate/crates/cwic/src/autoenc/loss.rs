//! Pixel-space distortion: mean squared error and PSNR.

use crate::tensor::FeatureCuboid;
use crate::{Error, Result};

/// PSNR ceiling reported for exact reconstructions.
pub const PSNR_CAP_DB: f64 = 99.0;

/// (1/(3HW)) * squared error over a 3-channel image pair.
pub fn mse_loss(xhat: &FeatureCuboid, x: &FeatureCuboid) -> Result<f64> {
    if xhat.shape() != x.shape() {
        return Err(Error::config(format!(
            "image shapes differ: {:?} vs {:?}",
            xhat.shape(),
            x.shape()
        )));
    }
    let norm = x.len() as f64;
    let sum: f64 = xhat
        .as_slice()
        .iter()
        .zip(x.as_slice())
        .map(|(&a, &b)| (a - b) * (a - b))
        .sum();
    Ok(sum / norm)
}

/// Gradient of [`mse_loss`] with respect to the reconstruction.
pub fn mse_loss_backward(xhat: &FeatureCuboid, x: &FeatureCuboid) -> Result<FeatureCuboid> {
    if xhat.shape() != x.shape() {
        return Err(Error::config("image shapes differ"));
    }
    let norm = x.len() as f64;
    let values = xhat
        .as_slice()
        .iter()
        .zip(x.as_slice())
        .map(|(&a, &b)| 2.0 * (a - b) / norm)
        .collect();
    let (c, h, w) = x.shape();
    FeatureCuboid::from_vec(c, h, w, values)
}

/// 10*log10(1/MSE) on [0,1]-scaled pixels, capped for exact matches.
pub fn psnr_db(xhat: &FeatureCuboid, x: &FeatureCuboid) -> Result<f64> {
    let mse = mse_loss(xhat, x)?;
    if mse <= 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB))
}
