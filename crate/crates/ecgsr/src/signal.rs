//! Multi-lead signal and window abstractions consumed by every other module.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of leads in a standard 12-lead recording.
pub const NUM_LEADS: usize = 12;

/// The twelve standard leads, in the fixed row order used throughout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Lead {
    I,
    II,
    III,
    AVR,
    AVL,
    AVF,
    V1,
    V2,
    V3,
    V4,
    V5,
    V6,
}

impl Lead {
    /// All leads in row order; `ALL[i].index() == i`.
    pub const ALL: [Lead; NUM_LEADS] = [
        Lead::I,
        Lead::II,
        Lead::III,
        Lead::AVR,
        Lead::AVL,
        Lead::AVF,
        Lead::V1,
        Lead::V2,
        Lead::V3,
        Lead::V4,
        Lead::V5,
        Lead::V6,
    ];

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|&l| l == self).expect("lead in ALL")
    }

    pub fn from_index(index: usize) -> Option<Lead> {
        Self::ALL.get(index).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Lead::I => "I",
            Lead::II => "II",
            Lead::III => "III",
            Lead::AVR => "aVR",
            Lead::AVL => "aVL",
            Lead::AVF => "aVF",
            Lead::V1 => "V1",
            Lead::V2 => "V2",
            Lead::V3 => "V3",
            Lead::V4 => "V4",
            Lead::V5 => "V5",
            Lead::V6 => "V6",
        }
    }

    pub fn from_name(name: &str) -> Option<Lead> {
        Self::ALL.iter().copied().find(|l| l.name().eq_ignore_ascii_case(name))
    }
}

impl std::fmt::Display for Lead {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Diagnostic superclass label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Superclass {
    Norm,
    Mi,
    Cd,
    Hyp,
    Sttc,
}

impl Superclass {
    pub const ALL: [Superclass; 5] = [
        Superclass::Norm,
        Superclass::Mi,
        Superclass::Cd,
        Superclass::Hyp,
        Superclass::Sttc,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Superclass::Norm => "NORM",
            Superclass::Mi => "MI",
            Superclass::Cd => "CD",
            Superclass::Hyp => "HYP",
            Superclass::Sttc => "STTC",
        }
    }
}

impl std::fmt::Display for Superclass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Superclass {
    type Err = SignalError;

    fn from_str(s: &str) -> Result<Self, SignalError> {
        Self::ALL
            .iter()
            .copied()
            .find(|c| c.name() == s)
            .ok_or_else(|| SignalError::UnknownClass { label: s.to_string() })
    }
}

/// Kind of synthetic corruption applied to a low-resolution window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ArtifactKind {
    /// Baseline wander: sub-0.5 Hz respiratory drift.
    Bw,
    /// Broadband muscle noise overlapping the ECG band above ~20 Hz.
    Emg,
    /// Slow electrodermal drift.
    Eda,
}

impl ArtifactKind {
    pub const ALL: [ArtifactKind; 3] = [ArtifactKind::Bw, ArtifactKind::Emg, ArtifactKind::Eda];

    pub fn name(self) -> &'static str {
        match self {
            ArtifactKind::Bw => "BW",
            ArtifactKind::Emg => "EMG",
            ArtifactKind::Eda => "EDA",
        }
    }
}

impl std::fmt::Display for ArtifactKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum SignalError {
    #[error("expected 12 lead rows, got {got}")]
    RowCount { got: usize },
    #[error("lead rows have unequal lengths")]
    Ragged,
    #[error("record must contain at least one sample per lead")]
    Empty,
    #[error("samples contain a non-finite value (lead {lead}, sample {index})")]
    NonFinite { lead: usize, index: usize },
    #[error("sampling rate must be positive and finite, got {fs}")]
    BadFs { fs: f64 },
    #[error("record too short: need {needed} samples, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("window of {seconds} s at {fs} Hz is not an integer number of samples")]
    NonIntegerWindow { seconds: f64, fs: f64 },
    #[error("unknown superclass label {label:?}")]
    UnknownClass { label: String },
    #[error("LR/HR length mismatch: lr has {lr} samples, hr has {hr} (need hr = 10*lr)")]
    LengthRatio { lr: usize, hr: usize },
    #[error("artifact_kind must be set exactly when the pair is corrupted")]
    ArtifactFlag,
}

/// A validated 12 x N sample matrix in millivolts.
///
/// Immutable after construction; all pipeline code clones rather than
/// mutating in place, so records are safe to share across threads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiLeadRecord {
    samples: [Vec<f64>; NUM_LEADS],
    fs: f64,
    record_id: String,
    superclass: Option<Superclass>,
}

impl MultiLeadRecord {
    /// Validates and copies `samples` into a record.
    pub fn new(
        samples: &[Vec<f64>],
        fs: f64,
        record_id: impl Into<String>,
        superclass: Option<Superclass>,
    ) -> Result<Self, SignalError> {
        if samples.len() != NUM_LEADS {
            return Err(SignalError::RowCount { got: samples.len() });
        }
        let n = samples[0].len();
        if samples.iter().any(|row| row.len() != n) {
            return Err(SignalError::Ragged);
        }
        if n == 0 {
            return Err(SignalError::Empty);
        }
        if !(fs.is_finite() && fs > 0.0) {
            return Err(SignalError::BadFs { fs });
        }
        for (lead, row) in samples.iter().enumerate() {
            if let Some(index) = row.iter().position(|v| !v.is_finite()) {
                return Err(SignalError::NonFinite { lead, index });
            }
        }
        let samples: [Vec<f64>; NUM_LEADS] =
            samples.to_vec().try_into().expect("length checked above");
        Ok(Self { samples, fs, record_id: record_id.into(), superclass })
    }

    /// Builds a record from already-validated per-lead rows, skipping the
    /// finite/shape scan. Internal fast path for DSP outputs whose inputs
    /// were validated records.
    pub(crate) fn from_rows_unchecked(
        samples: [Vec<f64>; NUM_LEADS],
        fs: f64,
        record_id: String,
        superclass: Option<Superclass>,
    ) -> Self {
        debug_assert!(samples.iter().all(|r| r.len() == samples[0].len() && !r.is_empty()));
        Self { samples, fs, record_id, superclass }
    }

    /// Samples per lead.
    pub fn len(&self) -> usize {
        self.samples[0].len()
    }

    pub fn is_empty(&self) -> bool {
        false // N >= 1 by construction
    }

    pub fn fs(&self) -> f64 {
        self.fs
    }

    pub fn duration_seconds(&self) -> f64 {
        self.len() as f64 / self.fs
    }

    pub fn record_id(&self) -> &str {
        &self.record_id
    }

    pub fn superclass(&self) -> Option<Superclass> {
        self.superclass
    }

    pub fn lead(&self, index: usize) -> &[f64] {
        &self.samples[index]
    }

    pub fn leads(&self) -> &[Vec<f64>; NUM_LEADS] {
        &self.samples
    }

    /// Applies `f` to every lead row independently, keeping id and class.
    /// Length and finiteness of the result are the caller's contract.
    pub(crate) fn map_leads(&self, mut f: impl FnMut(&[f64]) -> Vec<f64>) -> MultiLeadRecord {
        let rows: Vec<Vec<f64>> = self.samples.iter().map(|row| f(row)).collect();
        MultiLeadRecord::from_rows_unchecked(
            rows.try_into().expect("12 rows in, 12 rows out"),
            self.fs,
            self.record_id.clone(),
            self.superclass,
        )
    }

    pub(crate) fn with_fs(mut self, fs: f64) -> MultiLeadRecord {
        self.fs = fs;
        self
    }

    pub(crate) fn with_record_id(mut self, id: String) -> MultiLeadRecord {
        self.record_id = id;
        self
    }

    pub(crate) fn with_superclass(mut self, superclass: Option<Superclass>) -> MultiLeadRecord {
        self.superclass = superclass;
        self
    }

    /// Row-major flattened copy (lead-major, 12*N values).
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(NUM_LEADS * self.len());
        for row in &self.samples {
            out.extend_from_slice(row);
        }
        out
    }

    /// Rebuilds a record from a lead-major flat buffer.
    pub fn from_flat(
        flat: &[f64],
        fs: f64,
        record_id: impl Into<String>,
        superclass: Option<Superclass>,
    ) -> Result<Self, SignalError> {
        if flat.len() % NUM_LEADS != 0 {
            return Err(SignalError::Ragged);
        }
        let n = flat.len() / NUM_LEADS;
        let rows: Vec<Vec<f64>> = (0..NUM_LEADS).map(|i| flat[i * n..(i + 1) * n].to_vec()).collect();
        Self::new(&rows, fs, record_id, superclass)
    }
}

/// Validated construction of a [`MultiLeadRecord`]; the input matrix is
/// copied, never aliased.
pub fn make_record(
    samples: &[Vec<f64>],
    fs: f64,
    record_id: impl Into<String>,
    superclass: Option<Superclass>,
) -> Result<MultiLeadRecord, SignalError> {
    MultiLeadRecord::new(samples, fs, record_id, superclass)
}

/// Splits a record into consecutive non-overlapping windows of
/// `window_seconds`. A trailing remainder shorter than one window is
/// discarded. Outputs keep fs, superclass and source record id; the
/// position in the returned vector is the window index.
pub fn split_windows(
    record: &MultiLeadRecord,
    window_seconds: f64,
) -> Result<Vec<MultiLeadRecord>, SignalError> {
    let samples_f = window_seconds * record.fs();
    let window_len = samples_f.round() as usize;
    if window_len == 0 || (samples_f - samples_f.round()).abs() > 1e-9 {
        return Err(SignalError::NonIntegerWindow { seconds: window_seconds, fs: record.fs() });
    }
    let n = record.len();
    if n < window_len {
        return Err(SignalError::TooShort { needed: window_len, got: n });
    }
    let count = n / window_len;
    let mut out = Vec::with_capacity(count);
    for w in 0..count {
        let start = w * window_len;
        out.push(record.map_leads(|row| row[start..start + window_len].to_vec()));
    }
    Ok(out)
}

/// An aligned (LR 50 Hz, HR 500 Hz) training/evaluation unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowPair {
    /// Low-resolution window, possibly corrupted.
    pub lr: MultiLeadRecord,
    /// High-resolution target; never corrupted.
    pub hr: MultiLeadRecord,
    /// Pre-corruption LR window, kept so the denoising target stays
    /// available after `corrupt` replaces `lr`.
    pub lr_clean: Option<MultiLeadRecord>,
    pub corrupted: bool,
    pub artifact_kind: Option<ArtifactKind>,
    pub superclass: Superclass,
    pub source_record: String,
    pub window_index: u32,
}

impl WindowPair {
    pub fn new(
        lr: MultiLeadRecord,
        hr: MultiLeadRecord,
        superclass: Superclass,
        source_record: impl Into<String>,
        window_index: u32,
    ) -> Result<Self, SignalError> {
        if lr.len() * 10 != hr.len() {
            return Err(SignalError::LengthRatio { lr: lr.len(), hr: hr.len() });
        }
        Ok(Self {
            lr,
            hr,
            lr_clean: None,
            corrupted: false,
            artifact_kind: None,
            superclass,
            source_record: source_record.into(),
            window_index,
        })
    }

    /// The clean LR window: the pre-corruption copy when the pair was
    /// corrupted, otherwise `lr` itself.
    pub fn lr_target(&self) -> &MultiLeadRecord {
        self.lr_clean.as_ref().unwrap_or(&self.lr)
    }

    /// A copy of this pair with corruption undone.
    pub fn to_clean(&self) -> WindowPair {
        let mut p = self.clone();
        if let Some(clean) = p.lr_clean.take() {
            p.lr = clean;
        }
        p.corrupted = false;
        p.artifact_kind = None;
        p
    }

    /// Stable identifier of the underlying window.
    pub fn window_id(&self) -> String {
        format!("{}/w{}", self.source_record, self.window_index)
    }

    /// Checks the corrupted/artifact_kind coupling invariant.
    pub fn validate_flags(&self) -> Result<(), SignalError> {
        if self.corrupted != self.artifact_kind.is_some() {
            return Err(SignalError::ArtifactFlag);
        }
        Ok(())
    }
}
