//! Parameter checkpoint file.
//!
//! Binary layout, all integers little-endian:
//!
//! ```text
//! magic   8 bytes  "ECGSRCK1"
//! version u32      1
//! count   u32      number of entries
//! entry   repeated:
//!   name_len u32, name bytes (UTF-8)
//!   ndim     u32, dims (u64 each)
//!   data     f64 * product(dims), IEEE-754 bit patterns
//! ```
//!
//! Round trips are byte-exact: values are stored as raw f64 bits.

use thiserror::Error;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"ECGSRCK1";
pub const CHECKPOINT_VERSION: u32 = 1;

const MAX_NAME_LEN: usize = 4096;
const MAX_DIMS: usize = 8;

#[derive(Debug, Error, PartialEq)]
pub enum CheckpointError {
    #[error("bad magic bytes")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    BadVersion(u32),
    #[error("checkpoint truncated at {context}")]
    Truncated { context: String },
    #[error("checkpoint field out of bounds: {context}")]
    OutOfBounds { context: String },
    #[error("entry name is not UTF-8")]
    BadName,
}

/// One named parameter buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

pub fn write_checkpoint(entries: &[CheckpointEntry]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for entry in entries {
        out.extend_from_slice(&(entry.name.len() as u32).to_le_bytes());
        out.extend_from_slice(entry.name.as_bytes());
        out.extend_from_slice(&(entry.shape.len() as u32).to_le_bytes());
        for &d in &entry.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in &entry.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, context: &str) -> Result<&'a [u8], CheckpointError> {
        if self.bytes.len() - self.at < n {
            return Err(CheckpointError::Truncated { context: context.to_string() });
        }
        let slice = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(slice)
    }

    fn u32(&mut self, context: &str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, context)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, context: &str) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8, context)?.try_into().expect("8 bytes")))
    }
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<Vec<CheckpointEntry>, CheckpointError> {
    let mut r = Reader { bytes, at: 0 };
    if r.take(8, "magic")? != CHECKPOINT_MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::BadVersion(version));
    }
    let count = r.u32("entry count")? as usize;
    let mut entries = Vec::new();
    for e in 0..count {
        let name_len = r.u32("name length")? as usize;
        if name_len > MAX_NAME_LEN {
            return Err(CheckpointError::OutOfBounds {
                context: format!("entry {e} name length {name_len}"),
            });
        }
        let name = std::str::from_utf8(r.take(name_len, "name")?)
            .map_err(|_| CheckpointError::BadName)?
            .to_string();
        let ndim = r.u32("ndim")? as usize;
        if ndim > MAX_DIMS {
            return Err(CheckpointError::OutOfBounds { context: format!("entry {e} ndim {ndim}") });
        }
        let mut shape = Vec::with_capacity(ndim);
        let mut elements: u128 = 1;
        for _ in 0..ndim {
            let d = r.u64("dim")?;
            elements = elements.saturating_mul(d as u128);
            shape.push(d as usize);
        }
        // bound the element count by what the remaining bytes can hold
        // before allocating anything
        let remaining = (bytes.len() - r.at) as u128;
        if elements.saturating_mul(8) > remaining {
            return Err(CheckpointError::Truncated { context: format!("entry {e} data") });
        }
        let n = elements as usize;
        let raw = r.take(n * 8, "data")?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        entries.push(CheckpointEntry { name, shape, data });
    }
    if r.at != bytes.len() {
        return Err(CheckpointError::OutOfBounds {
            context: format!("{} trailing bytes", bytes.len() - r.at),
        });
    }
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<CheckpointEntry> {
        vec![
            CheckpointEntry {
                name: "encoder.0.weight".into(),
                shape: vec![2, 3, 1],
                data: vec![0.5, -1.25, 3.0, f64::MIN_POSITIVE, 1e300, -0.0],
            },
            CheckpointEntry { name: "encoder.0.bias".into(), shape: vec![2], data: vec![0.0, 9.9] },
        ]
    }

    #[test]
    fn round_trip_is_byte_exact() {
        let bytes = write_checkpoint(&sample());
        let back = read_checkpoint(&bytes).unwrap();
        assert_eq!(back, sample());
        let again = write_checkpoint(&back);
        assert_eq!(bytes, again);
    }

    #[test]
    fn rejects_bad_magic_and_version() {
        let mut bytes = write_checkpoint(&sample());
        bytes[0] = b'X';
        assert_eq!(read_checkpoint(&bytes), Err(CheckpointError::BadMagic));
        let mut bytes = write_checkpoint(&sample());
        bytes[8] = 99;
        assert!(matches!(read_checkpoint(&bytes), Err(CheckpointError::BadVersion(_))));
    }

    #[test]
    fn rejects_truncation_anywhere() {
        let bytes = write_checkpoint(&sample());
        for cut in [0, 7, 11, 15, 20, bytes.len() - 1] {
            assert!(read_checkpoint(&bytes[..cut]).is_err(), "cut at {cut}");
        }
    }

    #[test]
    fn rejects_allocation_bombs() {
        // header claiming a huge dim with no data behind it
        let mut bytes = Vec::new();
        bytes.extend_from_slice(CHECKPOINT_MAGIC);
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.push(b'w');
        bytes.extend_from_slice(&2u32.to_le_bytes());
        bytes.extend_from_slice(&u64::MAX.to_le_bytes());
        bytes.extend_from_slice(&u64::MAX.to_le_bytes());
        assert!(matches!(read_checkpoint(&bytes), Err(CheckpointError::Truncated { .. })));
    }

    #[test]
    fn rejects_trailing_garbage() {
        let mut bytes = write_checkpoint(&sample());
        bytes.push(0);
        assert!(matches!(read_checkpoint(&bytes), Err(CheckpointError::OutOfBounds { .. })));
    }
}
