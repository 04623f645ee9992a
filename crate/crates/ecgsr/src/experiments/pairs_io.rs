//! Binary window-pair set, the hand-off between `preprocess` and the
//! training/evaluation commands.
//!
//! Layout (integers little-endian, floats IEEE-754 bits):
//!
//! ```text
//! magic    8 bytes "ECGSRPR1"
//! version  u32     1
//! count    u32
//! pair     repeated:
//!   source_len u32, source bytes, window_index u32,
//!   superclass u8 (0..=4), corrupted u8, artifact u8 (0 none, 1 BW, 2 EMG, 3 EDA),
//!   has_clean u8,
//!   lr record, hr record, [clean lr record]
//! record:
//!   fs f64, n u64, then 12*n f64 lead-major
//! ```

use crate::signal::{ArtifactKind, MultiLeadRecord, Superclass, WindowPair, NUM_LEADS};
use thiserror::Error;

pub const PAIRS_MAGIC: &[u8; 8] = b"ECGSRPR1";
pub const PAIRS_VERSION: u32 = 1;

const MAX_SOURCE_LEN: usize = 4096;

#[derive(Debug, Error)]
pub enum PairsFileError {
    #[error("bad magic bytes")]
    BadMagic,
    #[error("unsupported pairs-file version {0}")]
    BadVersion(u32),
    #[error("pairs file truncated at {context}")]
    Truncated { context: String },
    #[error("pairs file field invalid: {context}")]
    Invalid { context: String },
    #[error("pair {index} is not a valid window pair: {source}")]
    BadPair { index: usize, source: crate::signal::SignalError },
}

fn put_record(out: &mut Vec<u8>, record: &MultiLeadRecord) {
    out.extend_from_slice(&record.fs().to_le_bytes());
    out.extend_from_slice(&(record.len() as u64).to_le_bytes());
    for row in record.leads() {
        for v in row {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
}

pub fn write_pairs(pairs: &[WindowPair]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(PAIRS_MAGIC);
    out.extend_from_slice(&PAIRS_VERSION.to_le_bytes());
    out.extend_from_slice(&(pairs.len() as u32).to_le_bytes());
    for pair in pairs {
        out.extend_from_slice(&(pair.source_record.len() as u32).to_le_bytes());
        out.extend_from_slice(pair.source_record.as_bytes());
        out.extend_from_slice(&pair.window_index.to_le_bytes());
        out.push(pair.superclass as u8);
        out.push(pair.corrupted as u8);
        out.push(match pair.artifact_kind {
            None => 0,
            Some(ArtifactKind::Bw) => 1,
            Some(ArtifactKind::Emg) => 2,
            Some(ArtifactKind::Eda) => 3,
        });
        out.push(pair.lr_clean.is_some() as u8);
        put_record(&mut out, &pair.lr);
        put_record(&mut out, &pair.hr);
        if let Some(clean) = &pair.lr_clean {
            put_record(&mut out, clean);
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, context: &str) -> Result<&'a [u8], PairsFileError> {
        if self.bytes.len() - self.at < n {
            return Err(PairsFileError::Truncated { context: context.to_string() });
        }
        let s = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u8(&mut self, context: &str) -> Result<u8, PairsFileError> {
        Ok(self.take(1, context)?[0])
    }

    fn u32(&mut self, context: &str) -> Result<u32, PairsFileError> {
        Ok(u32::from_le_bytes(self.take(4, context)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, context: &str) -> Result<u64, PairsFileError> {
        Ok(u64::from_le_bytes(self.take(8, context)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self, context: &str) -> Result<f64, PairsFileError> {
        Ok(f64::from_le_bytes(self.take(8, context)?.try_into().expect("8 bytes")))
    }

    fn record(&mut self, id: &str, superclass: Superclass) -> Result<MultiLeadRecord, PairsFileError> {
        let fs = self.f64("record fs")?;
        let n = self.u64("record length")? as usize;
        // bound the sample count by the remaining bytes before allocating
        let need = (n as u128) * (NUM_LEADS as u128) * 8;
        if need > (self.bytes.len() - self.at) as u128 {
            return Err(PairsFileError::Truncated { context: "record samples".into() });
        }
        let mut rows: Vec<Vec<f64>> = Vec::with_capacity(NUM_LEADS);
        for _ in 0..NUM_LEADS {
            let raw = self.take(n * 8, "record row")?;
            rows.push(
                raw.chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                    .collect(),
            );
        }
        MultiLeadRecord::new(&rows, fs, id, Some(superclass))
            .map_err(|e| PairsFileError::Invalid { context: format!("record: {e}") })
    }
}

pub fn read_pairs(bytes: &[u8]) -> Result<Vec<WindowPair>, PairsFileError> {
    let mut r = Reader { bytes, at: 0 };
    if r.take(8, "magic")? != PAIRS_MAGIC {
        return Err(PairsFileError::BadMagic);
    }
    let version = r.u32("version")?;
    if version != PAIRS_VERSION {
        return Err(PairsFileError::BadVersion(version));
    }
    let count = r.u32("pair count")? as usize;
    let mut pairs = Vec::new();
    for index in 0..count {
        let source_len = r.u32("source length")? as usize;
        if source_len > MAX_SOURCE_LEN {
            return Err(PairsFileError::Invalid {
                context: format!("source id length {source_len}"),
            });
        }
        let source = std::str::from_utf8(r.take(source_len, "source id")?)
            .map_err(|_| PairsFileError::Invalid { context: "source id not UTF-8".into() })?
            .to_string();
        let window_index = r.u32("window index")?;
        let superclass = *Superclass::ALL
            .get(r.u8("superclass")? as usize)
            .ok_or_else(|| PairsFileError::Invalid { context: "superclass code".into() })?;
        let corrupted = match r.u8("corrupted flag")? {
            0 => false,
            1 => true,
            other => {
                return Err(PairsFileError::Invalid { context: format!("corrupted flag {other}") })
            }
        };
        let artifact = match r.u8("artifact code")? {
            0 => None,
            1 => Some(ArtifactKind::Bw),
            2 => Some(ArtifactKind::Emg),
            3 => Some(ArtifactKind::Eda),
            other => {
                return Err(PairsFileError::Invalid { context: format!("artifact code {other}") })
            }
        };
        if corrupted != artifact.is_some() {
            return Err(PairsFileError::Invalid {
                context: "corrupted flag and artifact kind disagree".into(),
            });
        }
        let has_clean = match r.u8("clean flag")? {
            0 => false,
            1 => true,
            other => return Err(PairsFileError::Invalid { context: format!("clean flag {other}") }),
        };
        let lr = r.record(&source, superclass)?;
        let hr = r.record(&source, superclass)?;
        let lr_clean = if has_clean { Some(r.record(&source, superclass)?) } else { None };
        let mut pair = WindowPair::new(lr, hr, superclass, source, window_index)
            .map_err(|e| PairsFileError::BadPair { index, source: e })?;
        pair.corrupted = corrupted;
        pair.artifact_kind = artifact;
        pair.lr_clean = lr_clean;
        pairs.push(pair);
    }
    if r.at != bytes.len() {
        return Err(PairsFileError::Invalid {
            context: format!("{} trailing bytes", bytes.len() - r.at),
        });
    }
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::make_record;
    use crate::synth::{corrupt, CorruptionPolicy};

    fn sample_pairs() -> Vec<WindowPair> {
        let mut out = Vec::new();
        for seed in 0..3u64 {
            let lr_rows: Vec<Vec<f64>> = (0..NUM_LEADS)
                .map(|l| (0..250).map(|i| (((l as u64 + 1) * (i as u64 + seed)) as f64 * 0.02).sin()).collect())
                .collect();
            let hr_rows: Vec<Vec<f64>> = (0..NUM_LEADS)
                .map(|l| (0..2500).map(|i| (((l as u64 + 1) * (i as u64 + seed)) as f64 * 0.002).sin()).collect())
                .collect();
            let pair = WindowPair::new(
                make_record(&lr_rows, 50.0, format!("s{seed}"), None).unwrap(),
                make_record(&hr_rows, 500.0, format!("s{seed}"), None).unwrap(),
                Superclass::ALL[seed as usize % 5],
                format!("s{seed}"),
                (seed % 2) as u32,
            )
            .unwrap();
            let policy = CorruptionPolicy { corrupt_probability: 0.7, ..Default::default() };
            out.push(corrupt(&pair, &policy).unwrap());
        }
        out
    }

    #[test]
    fn round_trip_preserves_pairs() {
        let pairs = sample_pairs();
        let bytes = write_pairs(&pairs);
        let back = read_pairs(&bytes).unwrap();
        assert_eq!(pairs, back);
        assert_eq!(bytes, write_pairs(&back));
    }

    #[test]
    fn rejects_corrupted_headers() {
        let bytes = write_pairs(&sample_pairs());
        assert!(matches!(read_pairs(&bytes[1..]), Err(PairsFileError::BadMagic)));
        let mut v = bytes.clone();
        v[8] = 9;
        assert!(matches!(read_pairs(&v), Err(PairsFileError::BadVersion(9))));
        for cut in [10, 20, 40, bytes.len() / 2, bytes.len() - 1] {
            assert!(read_pairs(&bytes[..cut]).is_err(), "cut {cut}");
        }
    }

    #[test]
    fn rejects_huge_declared_record() {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(PAIRS_MAGIC);
        bytes.extend_from_slice(&PAIRS_VERSION.to_le_bytes());
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.push(b's');
        bytes.extend_from_slice(&0u32.to_le_bytes());
        bytes.extend_from_slice(&[0u8, 0, 0, 0]); // NORM, clean, no artifact, no clean copy
        bytes.extend_from_slice(&50.0f64.to_le_bytes());
        bytes.extend_from_slice(&u64::MAX.to_le_bytes());
        assert!(matches!(read_pairs(&bytes), Err(PairsFileError::Truncated { .. })));
    }
}
