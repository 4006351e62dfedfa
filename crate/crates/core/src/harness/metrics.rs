//! Paired full-reference metrics.

use crate::error::{Error, Result};
use crate::losses::{ssim_with, SsimConfig, MSE_FLOOR};
use crate::tensor_core::Tensor;

/// PSNR and SSIM of one prediction against its reference.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub id: String,
    pub psnr_db: f64,
    pub ssim: f64,
}

impl MetricsRow {
    pub const CSV_HEADER: &'static str = "id,psnr_db,ssim";

    pub fn csv_row(&self) -> String {
        format!("{},{:.6},{:.6}", self.id, self.psnr_db, self.ssim)
    }
}

/// `10 log10(1 / MSE)` for images in `[0, 1]`, capped at 100 dB.
pub fn psnr(pred: &Tensor, truth: &Tensor) -> Result<f64> {
    let se = pred.zip_map(truth, |a, b| (a - b) * (a - b))?;
    Ok(10.0 * (1.0 / se.mean().max(MSE_FLOOR)).log10())
}

/// Single-scale SSIM with the standard constants. Images smaller than the 11x11 window
/// use the largest odd window that fits.
pub fn ssim_metric(pred: &Tensor, truth: &Tensor) -> Result<f64> {
    let s = pred.shape();
    let side = s.height.min(s.width);
    if side == 0 {
        return Err(Error::shape("ssim", "empty image"));
    }
    let mut cfg = SsimConfig {
        max_scales: 1,
        ..Default::default()
    };
    if side < cfg.window {
        cfg.window = if side % 2 == 1 { side } else { side - 1 };
    }
    ssim_with(pred, truth, &cfg)
}

pub fn metrics(id: impl Into<String>, pred: &Tensor, truth: &Tensor) -> Result<MetricsRow> {
    if pred.shape() != truth.shape() {
        return Err(Error::shape(
            "metrics",
            format!("prediction {} and truth {} differ", pred.shape(), truth.shape()),
        ));
    }
    Ok(MetricsRow {
        id: id.into(),
        psnr_db: psnr(pred, truth)?,
        ssim: ssim_metric(pred, truth)?,
    })
}
