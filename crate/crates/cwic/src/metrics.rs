//! CSV emission for training and evaluation runs.
//!
//! Schemas (version 1, documented in docs/FORMATS.md):
//! training: step,distortion,rate_penalty,quantization,mask_total,bpp_estimate,learning_rate
//! eval:     image,bpp,psnr_db,ms_ssim_loss (last column empty when not computed),
//!           closed by a `mean` row over all images.

use std::path::Path;

use crate::autoenc::StepMetrics;
use crate::{Error, Result};

/// Fixed-length bit estimate before entropy coding: every kept code symbol
/// at log2(T) bits plus the importance map at log2(L) bits per position,
/// divided by the pixel count.
pub fn naive_bpp_estimate(
    mask_total: f64,
    quant_levels: usize,
    importance_levels: usize,
    code_positions: usize,
    pixels: usize,
) -> f64 {
    let code_bits = mask_total * (quant_levels as f64).log2();
    let importance_bits = code_positions as f64 * (importance_levels as f64).log2();
    (code_bits + importance_bits) / pixels as f64
}

/// Quotes a CSV field when it contains a delimiter, quote or newline.
fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn format_training_csv(
    steps: &[StepMetrics],
    quant_levels: usize,
    importance_levels: usize,
    code_positions: usize,
    pixels: usize,
) -> String {
    let mut out = String::from(
        "step,distortion,rate_penalty,quantization,mask_total,bpp_estimate,learning_rate\n",
    );
    for (i, m) in steps.iter().enumerate() {
        let bpp = naive_bpp_estimate(
            m.mean_mask_total,
            quant_levels,
            importance_levels,
            code_positions,
            pixels,
        );
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            i, m.distortion, m.rate_penalty, m.quantization, m.mean_mask_total, bpp, m.learning_rate
        ));
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub image: String,
    pub bpp: f64,
    pub psnr_db: f64,
    pub ms_ssim_loss: Option<f64>,
}

pub fn format_eval_csv(rows: &[EvalRow]) -> String {
    let mut out = String::from("image,bpp,psnr_db,ms_ssim_loss\n");
    let fmt_ssim = |v: Option<f64>| v.map(|s| s.to_string()).unwrap_or_default();
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            csv_field(&r.image),
            r.bpp,
            r.psnr_db,
            fmt_ssim(r.ms_ssim_loss)
        ));
    }
    if !rows.is_empty() {
        let n = rows.len() as f64;
        let bpp = rows.iter().map(|r| r.bpp).sum::<f64>() / n;
        let psnr = rows.iter().map(|r| r.psnr_db).sum::<f64>() / n;
        let ssim = if rows.iter().all(|r| r.ms_ssim_loss.is_some()) {
            Some(rows.iter().filter_map(|r| r.ms_ssim_loss).sum::<f64>() / n)
        } else {
            None
        };
        out.push_str(&format!("mean,{bpp},{psnr},{}\n", fmt_ssim(ssim)));
    }
    out
}

pub fn write_csv_file(path: impl AsRef<Path>, contents: &str) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}
