//! WFDB format-16 header parsing and signal decoding.
//!
//! Header layout (one record line, then one line per signal):
//!
//! ```text
//! <name> <n_signals> <fs> <n_samples>
//! <file> 16 <gain>(<baseline>)/mV <lead_name>
//! ```
//!
//! Signal data is 16-bit little-endian two's complement, frame-interleaved:
//! frame `j` holds sample `j` of every signal in order. Amplitude in mV is
//! `(raw - baseline) / gain`.

use super::IngestError;
use crate::signal::{MultiLeadRecord, NUM_LEADS};

#[derive(Debug, Clone, PartialEq)]
pub struct WfdbSignalSpec {
    pub file_name: String,
    pub format_code: u32,
    /// ADC units per millivolt; positive.
    pub gain: f64,
    /// ADC offset subtracted before gain division.
    pub baseline: i32,
    pub lead_name: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WfdbHeader {
    pub record_name: String,
    pub n_signals: usize,
    pub fs: f64,
    pub n_samples: usize,
    pub signals: Vec<WfdbSignalSpec>,
}

fn bad(reason: impl Into<String>) -> IngestError {
    IngestError::BadHeader { reason: reason.into() }
}

/// Parses a header. Signal lines beyond `n_signals` and blank/comment lines
/// (leading `#`) are rejected as malformed.
pub fn parse_header(text: &str) -> Result<WfdbHeader, IngestError> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty() && !l.trim_start().starts_with('#'));
    let record_line = lines.next().ok_or_else(|| bad("empty header"))?;
    let fields: Vec<&str> = record_line.split_whitespace().collect();
    if fields.len() != 4 {
        return Err(bad(format!("record line needs 4 fields, got {}", fields.len())));
    }
    let record_name = fields[0].to_string();
    let n_signals: usize =
        fields[1].parse().map_err(|_| bad(format!("bad signal count {:?}", fields[1])))?;
    let fs: f64 = fields[2].parse().map_err(|_| bad(format!("bad fs {:?}", fields[2])))?;
    if !(fs.is_finite() && fs > 0.0) {
        return Err(bad(format!("fs must be positive, got {fs}")));
    }
    let n_samples: usize =
        fields[3].parse().map_err(|_| bad(format!("bad sample count {:?}", fields[3])))?;
    if n_signals == 0 || n_samples == 0 {
        return Err(bad("header declares zero signals or samples"));
    }
    // Guard against allocation bombs before any buffer is sized from these.
    let total = (n_signals as u128) * (n_samples as u128) * 2;
    if total > u64::MAX as u128 {
        return Err(bad("declared signal size overflows"));
    }

    let mut signals = Vec::with_capacity(n_signals.min(64));
    for _ in 0..n_signals {
        let line = lines.next().ok_or_else(|| bad("missing signal line"))?;
        signals.push(parse_signal_line(line)?);
    }
    if lines.next().is_some() {
        return Err(bad("trailing content after signal lines"));
    }
    Ok(WfdbHeader { record_name, n_signals, fs, n_samples, signals })
}

fn parse_signal_line(line: &str) -> Result<WfdbSignalSpec, IngestError> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() < 4 {
        return Err(bad(format!("signal line needs >= 4 fields: {line:?}")));
    }
    let file_name = fields[0].to_string();
    let format_code: u32 =
        fields[1].parse().map_err(|_| bad(format!("bad format code {:?}", fields[1])))?;
    if format_code != 16 {
        return Err(IngestError::UnsupportedFormat { code: format_code.to_string() });
    }
    let (gain, baseline) = parse_gain(fields[2])?;
    // Tokens between the gain spec and the lead name (ADC resolution etc.)
    // are tolerated and ignored; the lead name is the last token.
    let lead_name = fields[fields.len() - 1].to_string();
    Ok(WfdbSignalSpec { file_name, format_code, gain, baseline, lead_name })
}

/// Parses `<gain>`, `<gain>(<baseline>)` with an optional `/mV` unit suffix.
fn parse_gain(spec: &str) -> Result<(f64, i32), IngestError> {
    let spec = spec.strip_suffix("/mV").unwrap_or(spec);
    let (gain_str, baseline) = match spec.find('(') {
        Some(open) => {
            let close =
                spec.find(')').ok_or_else(|| bad(format!("unclosed baseline in {spec:?}")))?;
            if close < open {
                return Err(bad(format!("malformed baseline in {spec:?}")));
            }
            let baseline: i32 = spec[open + 1..close]
                .parse()
                .map_err(|_| bad(format!("bad baseline in {spec:?}")))?;
            (&spec[..open], baseline)
        }
        None => (spec, 0),
    };
    let gain: f64 = gain_str.parse().map_err(|_| bad(format!("bad gain {gain_str:?}")))?;
    if !(gain.is_finite() && gain > 0.0) {
        return Err(bad(format!("gain must be positive, got {gain}")));
    }
    Ok((gain, baseline))
}

/// Decodes a full format-16 record (header text plus signal bytes) into a
/// validated 12-lead record in millivolts.
pub fn read_wfdb16(header_text: &[u8], signal_bytes: &[u8]) -> Result<MultiLeadRecord, IngestError> {
    let text = std::str::from_utf8(header_text).map_err(|_| bad("header is not UTF-8"))?;
    let header = parse_header(text)?;
    if header.n_signals != NUM_LEADS {
        return Err(bad(format!("pipeline needs 12 signals, header has {}", header.n_signals)));
    }
    let expected = 2 * header.n_signals * header.n_samples;
    if signal_bytes.len() != expected {
        return Err(IngestError::SizeMismatch { expected, got: signal_bytes.len() });
    }
    let mut rows: Vec<Vec<f64>> = vec![Vec::with_capacity(header.n_samples); NUM_LEADS];
    for frame in 0..header.n_samples {
        for (s, spec) in header.signals.iter().enumerate() {
            let at = (frame * header.n_signals + s) * 2;
            let raw = i16::from_le_bytes([signal_bytes[at], signal_bytes[at + 1]]);
            rows[s].push((raw as f64 - spec.baseline as f64) / spec.gain);
        }
    }
    MultiLeadRecord::new(&rows, header.fs, header.record_name.clone(), None)
        .map_err(|e| bad(format!("decoded record invalid: {e}")))
}

/// Encodes a record as (header text, signal bytes) with a common gain and
/// baseline for every lead. Samples are quantized with round-to-nearest;
/// values outside the i16 range saturate.
pub fn encode_wfdb16(record: &MultiLeadRecord, gain: f64, baseline: i32) -> (String, Vec<u8>) {
    let n = record.len();
    let mut header = String::new();
    header.push_str(&format!(
        "{} {} {} {}\n",
        record.record_id(),
        NUM_LEADS,
        format_fs(record.fs()),
        n
    ));
    for lead in crate::signal::Lead::ALL {
        header.push_str(&format!(
            "{}.dat 16 {}({})/mV {}\n",
            record.record_id(),
            format_fs(gain),
            baseline,
            lead.name()
        ));
    }
    let mut bytes = Vec::with_capacity(2 * NUM_LEADS * n);
    for frame in 0..n {
        for lead in 0..NUM_LEADS {
            let raw = (record.lead(lead)[frame] * gain + baseline as f64).round();
            let raw = raw.clamp(i16::MIN as f64, i16::MAX as f64) as i16;
            bytes.extend_from_slice(&raw.to_le_bytes());
        }
    }
    (header, bytes)
}

fn format_fs(v: f64) -> String {
    if v.fract() == 0.0 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::make_record;

    fn tiny_record(n: usize) -> MultiLeadRecord {
        let rows: Vec<Vec<f64>> = (0..NUM_LEADS)
            .map(|l| (0..n).map(|i| ((l + 1) as f64 * 0.1) * (i as f64 * 0.7).sin()).collect())
            .collect();
        make_record(&rows, 500.0, "t1", None).unwrap()
    }

    #[test]
    fn gain_1000_maps_lsb_to_microvolt() {
        // raw 1000 with gain 1000 ADU/mV and baseline 0 is exactly 1 mV
        let mut header = String::from("r 12 500 1\n");
        for lead in crate::signal::Lead::ALL {
            header.push_str(&format!("r.dat 16 1000(0)/mV {}\n", lead.name()));
        }
        let mut bytes = Vec::new();
        for _ in 0..NUM_LEADS {
            bytes.extend_from_slice(&1000i16.to_le_bytes());
        }
        let rec = read_wfdb16(header.as_bytes(), &bytes).unwrap();
        for lead in 0..NUM_LEADS {
            assert_eq!(rec.lead(lead)[0], 1.0);
        }
    }

    #[test]
    fn zero_raw_is_zero_mv() {
        let mut header = String::from("r 12 500 1\n");
        for lead in crate::signal::Lead::ALL {
            header.push_str(&format!("r.dat 16 1000/mV {}\n", lead.name()));
        }
        let bytes = vec![0u8; 24];
        let rec = read_wfdb16(header.as_bytes(), &bytes).unwrap();
        assert!(rec.leads().iter().all(|row| row[0] == 0.0));
    }

    #[test]
    fn size_mismatch_detected() {
        let (header, mut bytes) = encode_wfdb16(&tiny_record(5000), 1000.0, 0);
        assert_eq!(bytes.len(), 120_000);
        bytes.truncate(119_998);
        let err = read_wfdb16(header.as_bytes(), &bytes);
        assert!(matches!(err, Err(IngestError::SizeMismatch { expected: 120_000, got: 119_998 })));
    }

    #[test]
    fn rejects_unsupported_format() {
        let header = "r 12 500 1\n".to_string()
            + &crate::signal::Lead::ALL
                .iter()
                .map(|l| format!("r.dat 212 1000(0)/mV {}\n", l.name()))
                .collect::<String>();
        let err = read_wfdb16(header.as_bytes(), &vec![0u8; 24]);
        assert!(matches!(err, Err(IngestError::UnsupportedFormat { .. })));
    }

    #[test]
    fn decode_encode_round_trip_is_byte_identical() {
        let rec = tiny_record(400);
        let (header, bytes) = encode_wfdb16(&rec, 1000.0, 17);
        let decoded = read_wfdb16(header.as_bytes(), &bytes).unwrap();
        let (header2, bytes2) = encode_wfdb16(&decoded, 1000.0, 17);
        assert_eq!(header, header2);
        assert_eq!(bytes, bytes2);
    }

    #[test]
    fn quantization_error_bounded_by_half_lsb() {
        let rec = tiny_record(400);
        let gain = 1000.0;
        let (header, bytes) = encode_wfdb16(&rec, gain, 0);
        let decoded = read_wfdb16(header.as_bytes(), &bytes).unwrap();
        let bound = 1.0 / (2.0 * gain) + 1e-12;
        for lead in 0..NUM_LEADS {
            for (a, b) in rec.lead(lead).iter().zip(decoded.lead(lead)) {
                assert!((a - b).abs() <= bound, "|{a} - {b}| > {bound}");
            }
        }
    }

    #[test]
    fn header_parse_tolerates_extra_tokens_before_lead_name() {
        let line = "r.dat 16 1000(0)/mV 16 0 995 I";
        let spec = parse_signal_line(line).unwrap();
        assert_eq!(spec.lead_name, "I");
        assert_eq!(spec.gain, 1000.0);
    }

    #[test]
    fn header_rejects_garbage() {
        assert!(parse_header("").is_err());
        assert!(parse_header("r twelve 500 100\n").is_err());
        assert!(parse_header("r 12 500\n").is_err());
        assert!(read_wfdb16(&[0xff, 0xfe], &[]).is_err());
    }
}
