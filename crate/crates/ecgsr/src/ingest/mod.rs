//! Reading PTB-XL-style records and producing the train/validation split.

mod wfdb;

pub use wfdb::{encode_wfdb16, parse_header, read_wfdb16, WfdbHeader, WfdbSignalSpec};

use crate::signal::Superclass;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("bad header: {reason}")]
    BadHeader { reason: String },
    #[error("signal byte length {got} does not match header (expected {expected})")]
    SizeMismatch { expected: usize, got: usize },
    #[error("unsupported signal format {code} (only format 16 is handled)")]
    UnsupportedFormat { code: String },
    #[error("metadata must have columns record_id,superclass,path; got {got:?}")]
    BadColumns { got: Vec<String> },
    #[error(transparent)]
    UnknownClass(#[from] crate::signal::SignalError),
    #[error("metadata parse error: {0}")]
    Csv(#[from] csv::Error),
    #[error("no records of class {class} to split")]
    EmptyClass { class: Superclass },
    #[error("train fraction must be in (0, 1), got {fraction}")]
    BadFraction { fraction: f64 },
}

/// Which partition a record belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Split {
    Train,
    Validation,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub record_id: String,
    pub superclass: Superclass,
    pub path: String,
    pub split: Option<Split>,
}

/// Rows of (record id, superclass, path) plus an optional split assignment.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetIndex {
    pub entries: Vec<IndexEntry>,
}

impl DatasetIndex {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn of_split(&self, split: Split) -> impl Iterator<Item = &IndexEntry> {
        self.entries.iter().filter(move |e| e.split == Some(split))
    }
}

/// Parses the metadata CSV (`record_id,superclass,path`) into an unsplit index.
pub fn read_metadata(csv_text: &str) -> Result<DatasetIndex, IngestError> {
    let mut reader = csv::ReaderBuilder::new().from_reader(csv_text.as_bytes());
    let headers: Vec<String> = reader
        .headers()
        .map_err(IngestError::Csv)?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if headers != ["record_id", "superclass", "path"] {
        return Err(IngestError::BadColumns { got: headers });
    }
    let mut entries = Vec::new();
    for row in reader.records() {
        let row = row.map_err(IngestError::Csv)?;
        if row.len() != 3 {
            return Err(IngestError::BadColumns {
                got: row.iter().map(|s| s.to_string()).collect(),
            });
        }
        let superclass: Superclass = row[1].trim().parse()?;
        entries.push(IndexEntry {
            record_id: row[0].trim().to_string(),
            superclass,
            path: row[2].trim().to_string(),
            split: None,
        });
    }
    Ok(DatasetIndex { entries })
}

/// Assigns every record a split: records of `train_class` are shuffled with a
/// seeded RNG and the first `floor(fraction * count)` go to train, the rest
/// to validation; records of every other class go to test.
pub fn assign_split(
    index: &DatasetIndex,
    train_class: Superclass,
    train_fraction: f64,
    seed: u64,
) -> Result<DatasetIndex, IngestError> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(IngestError::BadFraction { fraction: train_fraction });
    }
    let mut out = index.clone();
    let mut class_rows: Vec<usize> = out
        .entries
        .iter()
        .enumerate()
        .filter(|(_, e)| e.superclass == train_class)
        .map(|(i, _)| i)
        .collect();
    if class_rows.is_empty() {
        return Err(IngestError::EmptyClass { class: train_class });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    class_rows.shuffle(&mut rng);
    let n_train = (train_fraction * class_rows.len() as f64).floor() as usize;
    for entry in out.entries.iter_mut() {
        entry.split = Some(Split::Test);
    }
    for (rank, &row) in class_rows.iter().enumerate() {
        out.entries[row].split =
            Some(if rank < n_train { Split::Train } else { Split::Validation });
    }
    Ok(out)
}
