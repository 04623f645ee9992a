//! Evaluation measures: MSE, RMSE, SSIM, SNR, PSNR.
//!
//! SNR is asymmetric by definition here: prediction power over residual
//! power. PSNR takes its peak over the prediction, max value (not max
//! absolute). `x = y` exactly yields an infinity sentinel for both rather
//! than an error. SSIM slides a length-11 uniform window per lead with
//! C1 = (0.01 R)^2, C2 = (0.03 R)^2 where R is the dynamic range of the
//! reference over all leads.

use crate::signal::NUM_LEADS;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// SSIM sliding-window length (samples).
pub const SSIM_WINDOW: usize = 11;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("shape mismatch: {context}")]
    ShapeMismatch { context: String },
    #[error("signal shorter than the SSIM window: {got} < {needed}")]
    TooShort { needed: usize, got: usize },
    #[error("PSNR peak is non-positive (max(x) = {peak})")]
    NonpositivePeak { peak: f64 },
}

type Matrix = [Vec<f64>; NUM_LEADS];

fn check_shapes(x: &Matrix, y: &Matrix) -> Result<(), MetricError> {
    if x[0].len() != y[0].len() {
        return Err(MetricError::ShapeMismatch {
            context: format!("{} vs {} samples", x[0].len(), y[0].len()),
        });
    }
    Ok(())
}

/// Mean over all 12*N samples of the squared difference. Infallible core
/// used by both the metric and RMSE (shared accumulator).
pub fn mse_matrix(x: &Matrix, y: &Matrix) -> f64 {
    let n = x[0].len();
    let mut acc = 0.0;
    for lead in 0..NUM_LEADS {
        for (a, b) in x[lead].iter().zip(&y[lead]) {
            acc += (a - b) * (a - b);
        }
    }
    acc / (NUM_LEADS * n) as f64
}

pub fn mse_metric(x: &Matrix, y: &Matrix) -> Result<f64, MetricError> {
    check_shapes(x, y)?;
    Ok(mse_matrix(x, y))
}

pub fn rmse_metric(x: &Matrix, y: &Matrix) -> Result<f64, MetricError> {
    Ok(mse_metric(x, y)?.sqrt())
}

/// Mean SSIM over every window position and lead.
pub fn ssim_metric(x: &Matrix, y: &Matrix) -> Result<f64, MetricError> {
    check_shapes(x, y)?;
    let n = x[0].len();
    if n < SSIM_WINDOW {
        return Err(MetricError::TooShort { needed: SSIM_WINDOW, got: n });
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for row in y.iter() {
        for &v in row {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    let range = (hi - lo).max(1e-12);
    let c1 = (0.01 * range) * (0.01 * range);
    let c2 = (0.03 * range) * (0.03 * range);
    let mut acc = 0.0;
    let mut count = 0usize;
    for lead in 0..NUM_LEADS {
        for at in 0..=n - SSIM_WINDOW {
            acc += windowed_ssim(&x[lead][at..at + SSIM_WINDOW], &y[lead][at..at + SSIM_WINDOW], c1, c2);
            count += 1;
        }
    }
    Ok(acc / count as f64)
}

/// SSIM of one window pair (population moments, uniform weights).
pub fn windowed_ssim(x: &[f64], y: &[f64], c1: f64, c2: f64) -> f64 {
    let w = x.len() as f64;
    let mx = x.iter().sum::<f64>() / w;
    let my = y.iter().sum::<f64>() / w;
    let mut vx = 0.0;
    let mut vy = 0.0;
    let mut cov = 0.0;
    for (a, b) in x.iter().zip(y) {
        vx += (a - mx) * (a - mx);
        vy += (b - my) * (b - my);
        cov += (a - mx) * (b - my);
    }
    vx /= w;
    vy /= w;
    cov /= w;
    ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
}

/// 10 log10(sum x^2 / sum (x-y)^2), prediction power over residual power.
/// `x = y` exactly gives +inf; zero prediction power with a nonzero
/// residual gives -inf.
pub fn snr_metric(x: &Matrix, y: &Matrix) -> Result<f64, MetricError> {
    check_shapes(x, y)?;
    let mut power = 0.0;
    let mut residual = 0.0;
    for lead in 0..NUM_LEADS {
        for (a, b) in x[lead].iter().zip(&y[lead]) {
            power += a * a;
            residual += (a - b) * (a - b);
        }
    }
    if residual == 0.0 {
        return Ok(f64::INFINITY);
    }
    if power == 0.0 {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(10.0 * (power / residual).log10())
}

/// Alternative SNR convention (reference power over residual power) for
/// cross-method comparisons.
pub fn snr_metric_reference(x: &Matrix, y: &Matrix) -> Result<f64, MetricError> {
    snr_metric(y, x)
}

/// 10 log10(max(x)^2 / mse); the peak is the maximum value of the
/// prediction, exactly as evaluated. `x = y` gives +inf; a non-positive
/// peak is an error.
pub fn psnr_metric(x: &Matrix, y: &Matrix) -> Result<f64, MetricError> {
    check_shapes(x, y)?;
    let mse = mse_matrix(x, y);
    let peak = x.iter().flat_map(|row| row.iter().copied()).fold(f64::NEG_INFINITY, f64::max);
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    if peak <= 0.0 {
        return Err(MetricError::NonpositivePeak { peak });
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

/// One evaluated window. CSV column order is fixed: window_id, superclass,
/// method, condition, mse, rmse, ssim, snr_db, psnr_db, then the outlier
/// annotations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub window_id: String,
    pub superclass: String,
    pub method: String,
    pub condition: String,
    pub mse: f64,
    pub rmse: f64,
    pub ssim: f64,
    pub snr_db: f64,
    pub psnr_db: f64,
    pub outlier: bool,
    pub peak_sample: Option<usize>,
}

impl MetricRow {
    /// Computes all five measures for a prediction/reference pair.
    /// A non-positive PSNR peak is recorded as NaN rather than failing the
    /// whole report.
    pub fn compute(
        window_id: impl Into<String>,
        superclass: impl Into<String>,
        method: impl Into<String>,
        condition: impl Into<String>,
        x: &Matrix,
        y: &Matrix,
    ) -> Result<MetricRow, MetricError> {
        let mse = mse_metric(x, y)?;
        Ok(MetricRow {
            window_id: window_id.into(),
            superclass: superclass.into(),
            method: method.into(),
            condition: condition.into(),
            mse,
            rmse: mse.sqrt(),
            ssim: ssim_metric(x, y)?,
            snr_db: snr_metric(x, y)?,
            psnr_db: match psnr_metric(x, y) {
                Ok(v) => v,
                Err(MetricError::NonpositivePeak { .. }) => f64::NAN,
                Err(e) => return Err(e),
            },
            outlier: false,
            peak_sample: None,
        })
    }
}
