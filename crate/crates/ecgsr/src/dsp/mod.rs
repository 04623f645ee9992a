//! Classical signal-processing primitives: the preprocessing filters and the
//! non-deep baselines.
//!
//! Every operation is pure and per-lead independent; records are never
//! mutated in place.

mod butterworth;
mod fourier;
mod spline;
mod wavelet;

pub use butterworth::{butter_bandpass, butter_highpass, butter_lowpass, sosfiltfilt, Sos};
pub use fourier::{fft_band_select_trace, fft_upsample_trace};
pub use spline::upsample as cubic_upsample_trace;
pub use wavelet::denoise_trace;

use crate::signal::MultiLeadRecord;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum DspError {
    #[error("bad filter spec: {reason}")]
    BadSpec { reason: String },
    #[error("bad decimation/upsampling factor {factor} for length {len}")]
    BadFactor { factor: usize, len: usize },
    #[error("record too short: need {needed} samples, got {got}")]
    TooShort { needed: usize, got: usize },
}

/// Filter shape selector for [`iir_filter`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum FilterKind {
    Highpass { cutoff_hz: f64 },
    Bandpass { low_hz: f64, high_hz: f64 },
}

/// A zero-phase Butterworth filter request.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IirFilterSpec {
    pub kind: FilterKind,
    pub order: usize,
    /// Sampling rate the cutoffs refer to; must match the filtered record.
    pub fs: f64,
}

impl IirFilterSpec {
    pub fn highpass(cutoff_hz: f64, order: usize, fs: f64) -> Self {
        Self { kind: FilterKind::Highpass { cutoff_hz }, order, fs }
    }

    pub fn bandpass(low_hz: f64, high_hz: f64, order: usize, fs: f64) -> Self {
        Self { kind: FilterKind::Bandpass { low_hz, high_hz }, order, fs }
    }

    fn validate(&self, record_fs: f64) -> Result<(), DspError> {
        let bad = |reason: String| Err(DspError::BadSpec { reason });
        if self.order < 1 {
            return bad(format!("order must be >= 1, got {}", self.order));
        }
        if (self.fs - record_fs).abs() > 1e-9 {
            return bad(format!("spec designed for fs {} but record has {}", self.fs, record_fs));
        }
        let nyquist = record_fs / 2.0;
        let cutoffs: Vec<f64> = match self.kind {
            FilterKind::Highpass { cutoff_hz } => vec![cutoff_hz],
            FilterKind::Bandpass { low_hz, high_hz } => {
                if low_hz >= high_hz {
                    return bad(format!("bandpass needs low < high, got {low_hz} >= {high_hz}"));
                }
                vec![low_hz, high_hz]
            }
        };
        for c in cutoffs {
            if !(c > 0.0 && c < nyquist) {
                return bad(format!("cutoff {c} Hz outside (0, {nyquist}) at fs {record_fs}"));
            }
        }
        Ok(())
    }

    fn design(&self) -> Vec<Sos> {
        match self.kind {
            FilterKind::Highpass { cutoff_hz } => butter_highpass(self.order, cutoff_hz, self.fs),
            FilterKind::Bandpass { low_hz, high_hz } => {
                butter_bandpass(self.order, low_hz, high_hz, self.fs)
            }
        }
    }
}

/// Zero-phase Butterworth filtering of every lead independently. Length and
/// sampling rate are unchanged.
pub fn iir_filter(record: &MultiLeadRecord, spec: &IirFilterSpec) -> Result<MultiLeadRecord, DspError> {
    spec.validate(record.fs())?;
    let sos = spec.design();
    Ok(record.map_leads(|row| sosfiltfilt(&sos, row)))
}

/// Anti-aliased integer-factor downsampling: zero-phase Butterworth lowpass
/// at 0.8x the post-decimation Nyquist, then every `factor`-th sample.
pub fn decimate(record: &MultiLeadRecord, factor: usize) -> Result<MultiLeadRecord, DspError> {
    let n = record.len();
    if factor < 2 || n % factor != 0 || n < 2 * factor {
        return Err(DspError::BadFactor { factor, len: n });
    }
    let out_fs = record.fs() / factor as f64;
    let cutoff = 0.8 * out_fs / 2.0;
    let sos = butter_lowpass(8, cutoff, record.fs());
    let out = record.map_leads(|row| {
        let filtered = sosfiltfilt(&sos, row);
        filtered.iter().step_by(factor).copied().collect()
    });
    Ok(out.with_fs(out_fs))
}

/// Natural-cubic-spline upsampling by an integer factor; output sampling
/// rate is `fs * factor`.
pub fn cubic_upsample(record: &MultiLeadRecord, factor: usize) -> Result<MultiLeadRecord, DspError> {
    if factor < 2 {
        return Err(DspError::BadFactor { factor, len: record.len() });
    }
    if record.len() < 4 {
        return Err(DspError::TooShort { needed: 4, got: record.len() });
    }
    let out = record.map_leads(|row| spline::upsample(row, factor));
    let fs = record.fs() * factor as f64;
    Ok(out.with_fs(fs))
}

/// DFT zero-padding upsampling by an integer factor (see
/// [`fft_upsample_trace`] for the scaling convention).
pub fn fft_upsample(record: &MultiLeadRecord, factor: usize) -> Result<MultiLeadRecord, DspError> {
    if factor < 2 {
        return Err(DspError::BadFactor { factor, len: record.len() });
    }
    let out = record.map_leads(|row| fourier::fft_upsample_trace(row, factor));
    let fs = record.fs() * factor as f64;
    Ok(out.with_fs(fs))
}

/// Daubechies-4 soft-threshold denoising of every lead (universal
/// threshold). Length and sampling rate are unchanged.
pub fn wavelet_denoise(record: &MultiLeadRecord, levels: usize) -> Result<MultiLeadRecord, DspError> {
    let needed = 1usize << levels;
    if record.len() < needed {
        return Err(DspError::TooShort { needed, got: record.len() });
    }
    Ok(record.map_leads(|row| wavelet::denoise_trace(row, levels)))
}

/// Brick-wall DFT band selection of every lead: bins outside
/// `[low_hz, high_hz]` are zeroed.
pub fn fft_band_filter(
    record: &MultiLeadRecord,
    low_hz: f64,
    high_hz: f64,
) -> Result<MultiLeadRecord, DspError> {
    if !(low_hz >= 0.0 && low_hz < high_hz) {
        return Err(DspError::BadSpec { reason: format!("band [{low_hz}, {high_hz}] invalid") });
    }
    let fs = record.fs();
    Ok(record.map_leads(|row| fourier::fft_band_select_trace(row, fs, low_hz, high_hz)))
}
