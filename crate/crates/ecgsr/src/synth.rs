//! Synthetic 12-lead ECG records and the three artifact classes used to
//! corrupt low-resolution windows.
//!
//! The beat model is a Gaussian-bump template (P, Q, R, S, T) placed at
//! seeded, jittered beat onsets in continuous time, so the same spec sampled
//! at 100 Hz and 500 Hz yields exactly aligned signal pairs.

use crate::dsp::{butter_bandpass, butter_lowpass, sosfiltfilt};
use crate::signal::{ArtifactKind, MultiLeadRecord, Superclass, WindowPair, NUM_LEADS};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("bad synthesis spec: {reason}")]
    BadSpec { reason: String },
    #[error("pair is already corrupted")]
    AlreadyCorrupted,
}

/// One Gaussian bump of the beat template.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaveParam {
    /// Offset from the R peak, seconds.
    pub center_s: f64,
    /// Gaussian sigma, seconds.
    pub width_s: f64,
    /// Peak amplitude, millivolts.
    pub amplitude_mv: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EcgSynthSpec {
    pub fs: f64,
    pub duration_s: f64,
    pub heart_rate_bpm: f64,
    /// Per-lead amplitude multipliers, in lead row order.
    pub lead_gains: [f64; NUM_LEADS],
    /// P, Q, R, S, T in that order.
    pub wave_params: [WaveParam; 5],
    pub seed: u64,
}

impl EcgSynthSpec {
    /// Template with roughly physiological proportions; aVR inverted.
    pub fn with_defaults(fs: f64, duration_s: f64, heart_rate_bpm: f64, seed: u64) -> Self {
        Self {
            fs,
            duration_s,
            heart_rate_bpm,
            lead_gains: [1.0, 1.15, 0.85, -0.5, 0.6, 0.75, 0.7, 0.95, 1.1, 1.2, 1.05, 0.9],
            wave_params: [
                WaveParam { center_s: -0.20, width_s: 0.030, amplitude_mv: 0.15 },
                WaveParam { center_s: -0.035, width_s: 0.012, amplitude_mv: -0.12 },
                WaveParam { center_s: 0.0, width_s: 0.014, amplitude_mv: 1.0 },
                WaveParam { center_s: 0.035, width_s: 0.012, amplitude_mv: -0.25 },
                WaveParam { center_s: 0.28, width_s: 0.065, amplitude_mv: 0.35 },
            ],
            seed,
        }
    }

    fn validate(&self) -> Result<usize, SynthError> {
        let bad = |reason: String| Err(SynthError::BadSpec { reason });
        if !(self.fs.is_finite() && self.fs > 0.0) {
            return bad(format!("fs must be positive, got {}", self.fs));
        }
        if !(30.0..=220.0).contains(&self.heart_rate_bpm) {
            return bad(format!("heart rate {} outside [30, 220]", self.heart_rate_bpm));
        }
        if self.wave_params.iter().any(|w| w.width_s <= 0.0) {
            return bad("wave widths must be positive".into());
        }
        let n = self.fs * self.duration_s;
        if n < 1.0 || (n - n.round()).abs() > 1e-9 {
            return bad(format!("fs*duration = {n} is not a positive integer sample count"));
        }
        Ok(n.round() as usize)
    }
}

/// Seeded beat onset times in seconds, with +-3% RR jitter. Independent of
/// the sampling rate.
fn beat_times(spec: &EcgSynthSpec) -> Vec<f64> {
    let rr = 60.0 / spec.heart_rate_bpm;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut t = 0.5 * rr;
    let mut times = Vec::new();
    // run past the end so partial T waves at the boundary are present
    while t < spec.duration_s + rr {
        times.push(t);
        let jitter: f64 = rng.random_range(-0.03..0.03);
        t += rr * (1.0 + jitter);
    }
    times
}

/// Generates a deterministic synthetic record:
/// `lead_gain * sum over beats of the five Gaussian bumps`.
pub fn synth_ecg(spec: &EcgSynthSpec) -> Result<MultiLeadRecord, SynthError> {
    let n = spec.validate()?;
    let beats = beat_times(spec);
    let mut template = vec![0.0f64; n];
    for (i, slot) in template.iter_mut().enumerate() {
        let t = i as f64 / spec.fs;
        let mut v = 0.0;
        for &beat in &beats {
            for w in &spec.wave_params {
                let dt = t - beat - w.center_s;
                // beyond 6 sigma a bump contributes < 2e-8 of its amplitude
                if dt.abs() < 6.0 * w.width_s {
                    v += w.amplitude_mv * (-0.5 * (dt / w.width_s).powi(2)).exp();
                }
            }
        }
        *slot = v;
    }
    let rows: Vec<Vec<f64>> =
        spec.lead_gains.iter().map(|&g| template.iter().map(|&v| g * v).collect()).collect();
    MultiLeadRecord::new(&rows, spec.fs, format!("synth{:08x}", spec.seed), None)
        .map_err(|e| SynthError::BadSpec { reason: e.to_string() })
}

/// One artifact trace request.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArtifactSpec {
    pub kind: ArtifactKind,
    /// Peak absolute amplitude of the generated trace, millivolts.
    pub amplitude_mv: f64,
    /// Frequency band the artifact occupies, Hz.
    pub band_hz: (f64, f64),
    pub seed: u64,
}

impl ArtifactSpec {
    /// Declared default amplitude and band per artifact kind.
    pub fn default_for(kind: ArtifactKind, fs: f64, seed: u64) -> Self {
        let (amplitude_mv, band_hz) = match kind {
            ArtifactKind::Bw => (0.3, (0.05, 0.5)),
            ArtifactKind::Emg => (0.2, (20.0, (0.45 * fs).min(150.0))),
            ArtifactKind::Eda => (0.15, (0.01, 1.0)),
        };
        Self { kind, amplitude_mv, band_hz, seed }
    }

    fn validate(&self, fs: f64) -> Result<(), SynthError> {
        let nyquist = fs / 2.0;
        if self.amplitude_mv < 0.0 {
            return Err(SynthError::BadSpec { reason: "amplitude must be >= 0".into() });
        }
        if !(self.band_hz.0 > 0.0 && self.band_hz.0 < self.band_hz.1 && self.band_hz.1 < nyquist) {
            return Err(SynthError::BadSpec {
                reason: format!("band {:?} invalid at fs {fs}", self.band_hz),
            });
        }
        Ok(())
    }
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.random::<f64>().max(1e-15);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Generates a single artifact trace of `n` samples at `fs`, scaled so the
/// maximum absolute value equals the requested amplitude exactly.
pub fn gen_artifact(spec: &ArtifactSpec, fs: f64, n: usize) -> Result<Vec<f64>, SynthError> {
    spec.validate(fs)?;
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let raw: Vec<f64> = match spec.kind {
        ArtifactKind::Bw => {
            // three seeded sinusoids inside the band
            let mut components = Vec::new();
            for _ in 0..3 {
                let f = rng.random_range(spec.band_hz.0..spec.band_hz.1);
                let phase = rng.random_range(0.0..std::f64::consts::TAU);
                let rel = rng.random_range(0.5..1.0);
                components.push((f, phase, rel));
            }
            (0..n)
                .map(|i| {
                    let t = i as f64 / fs;
                    components
                        .iter()
                        .map(|(f, p, a)| a * (std::f64::consts::TAU * f * t + p).sin())
                        .sum()
                })
                .collect()
        }
        ArtifactKind::Emg => {
            let noise: Vec<f64> = (0..n).map(|_| gaussian(&mut rng)).collect();
            let sos = butter_bandpass(4, spec.band_hz.0, spec.band_hz.1, fs);
            let filtered = sosfiltfilt(&sos, &noise);
            // on/off burst envelope over 0.25-1.0 s segments
            let mut envelope = vec![0.0; n];
            let mut at = 0usize;
            let mut any_on = false;
            while at < n {
                let seg = (rng.random_range(0.25..1.0) * fs).round().max(1.0) as usize;
                let on = rng.random::<f64>() < 0.6;
                any_on |= on;
                let end = (at + seg).min(n);
                if on {
                    envelope[at..end].iter_mut().for_each(|e| *e = 1.0);
                }
                at = end;
            }
            if !any_on {
                envelope.iter_mut().for_each(|e| *e = 1.0);
            }
            filtered.iter().zip(&envelope).map(|(v, e)| v * e).collect()
        }
        ArtifactKind::Eda => {
            let mut walk = Vec::with_capacity(n);
            let mut acc = 0.0;
            for _ in 0..n {
                acc += gaussian(&mut rng);
                walk.push(acc);
            }
            let sos = butter_lowpass(2, spec.band_hz.1, fs);
            sosfiltfilt(&sos, &walk)
        }
    };
    let max_abs = raw.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if spec.amplitude_mv == 0.0 || max_abs == 0.0 {
        return Ok(vec![0.0; n]);
    }
    let scale = spec.amplitude_mv / max_abs;
    Ok(raw.iter().map(|v| v * scale).collect())
}

/// How window pairs are randomly corrupted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorruptionPolicy {
    pub corrupt_probability: f64,
    /// Relative weights for BW, EMG, EDA.
    pub kind_weights: [f64; 3],
    pub seed: u64,
    /// Add the same trace to all 12 leads (respiration/motion physics);
    /// false draws an independent trace per lead.
    pub common_mode: bool,
}

impl Default for CorruptionPolicy {
    fn default() -> Self {
        Self { corrupt_probability: 0.5, kind_weights: [1.0, 1.0, 1.0], seed: 0, common_mode: true }
    }
}

/// Stable sub-seed derivation: independent of platform and process.
pub fn derive_seed(root: u64, context: &str, index: u64) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(root.to_le_bytes());
    hasher.update(context.as_bytes());
    hasher.update(index.to_le_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// Applies the corruption policy to a clean pair. The decision and artifact
/// draw are deterministic in (policy seed, source record, window index); the
/// HR member is never touched and the clean LR window is preserved in
/// `lr_clean` when corruption fires.
pub fn corrupt(pair: &WindowPair, policy: &CorruptionPolicy) -> Result<WindowPair, SynthError> {
    if pair.corrupted {
        return Err(SynthError::AlreadyCorrupted);
    }
    if policy.kind_weights.iter().all(|&w| w <= 0.0) {
        return Err(SynthError::BadSpec { reason: "kind weights are all zero".into() });
    }
    if !(0.0..=1.0).contains(&policy.corrupt_probability) {
        return Err(SynthError::BadSpec {
            reason: format!("corrupt probability {} outside [0,1]", policy.corrupt_probability),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
        policy.seed,
        &pair.source_record,
        pair.window_index as u64,
    ));
    if rng.random::<f64>() >= policy.corrupt_probability {
        return Ok(pair.clone());
    }
    let total: f64 = policy.kind_weights.iter().sum();
    let draw = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut kind = ArtifactKind::Eda;
    for (k, &w) in ArtifactKind::ALL.iter().zip(&policy.kind_weights) {
        acc += w;
        if draw < acc {
            kind = *k;
            break;
        }
    }
    let fs = pair.lr.fs();
    let n = pair.lr.len();
    let mut out = pair.clone();
    let corrupted_lr = if policy.common_mode {
        let trace = gen_artifact(&ArtifactSpec::default_for(kind, fs, rng.next_u64()), fs, n)?;
        pair.lr.map_leads(|row| row.iter().zip(&trace).map(|(v, a)| v + a).collect())
    } else {
        let mut rows: Vec<Vec<f64>> = Vec::with_capacity(NUM_LEADS);
        for lead in 0..NUM_LEADS {
            let trace = gen_artifact(&ArtifactSpec::default_for(kind, fs, rng.next_u64()), fs, n)?;
            rows.push(pair.lr.lead(lead).iter().zip(&trace).map(|(v, a)| v + a).collect());
        }
        MultiLeadRecord::new(&rows, fs, pair.lr.record_id().to_string(), pair.lr.superclass())
            .expect("corrupted rows keep the source shape")
    };
    out.lr_clean = Some(std::mem::replace(&mut out.lr, corrupted_lr));
    out.corrupted = true;
    out.artifact_kind = Some(kind);
    Ok(out)
}

/// Superclass assigned to synthetic record `index`: deterministic
/// round-robin over all five classes.
pub fn synthetic_superclass(index: usize) -> Superclass {
    Superclass::ALL[index % Superclass::ALL.len()]
}
