//! Reconstruction of denoised 500 Hz 12-lead ECG windows from corrupted
//! 50 Hz inputs, built around a dual-decoder convolutional autoencoder.
//!
//! The crate is organised as a pipeline:
//!
//! * [`signal`] — multi-lead record and window types shared everywhere
//! * [`ingest`] — WFDB format-16 reader/writer, metadata CSV, dataset splits
//! * [`dsp`] — zero-phase IIR filtering, decimation, spline/FFT upsampling,
//!   wavelet denoising (the non-deep baselines)
//! * [`synth`] — synthetic 12-lead ECG generator and the BW/EMG/EDA
//!   artifact models used to corrupt low-resolution windows
//! * [`nn`] — minimal reverse-mode autodiff engine: 1D convolution,
//!   transposed convolution, dropout, activations, MSE, Adam
//! * [`model`] — the dual-decoder autoencoder itself, its training loop
//!   and every ablation switch
//! * [`metrics`] — MSE / RMSE / SSIM / SNR / PSNR exactly as evaluated
//! * [`experiments`] — preprocessing pipeline, per-class evaluation,
//!   baseline comparison, missing-channel study, ablation suite,
//!   activation-map export

pub mod dsp;
pub mod experiments;
pub mod ingest;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod signal;
pub mod synth;

pub use signal::{Lead, MultiLeadRecord, Superclass, WindowPair};
