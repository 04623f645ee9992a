//! Report aggregation and serialization: rows as CSV, aggregates plus the
//! config fingerprint as JSON.

use crate::metrics::MetricRow;
use crate::signal::{MultiLeadRecord, WindowPair, NUM_LEADS};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::io::Write;

/// Grouped statistics; one row per (group, method, condition).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub group: String,
    pub method: String,
    pub condition: String,
    pub count: usize,
    pub mse_min: f64,
    pub mse_max: f64,
    pub mse_mean: f64,
    pub mse_std: f64,
    pub rmse_mean: f64,
    pub ssim_mean: f64,
    pub snr_db_mean: f64,
    pub psnr_db_mean: f64,
}

/// Metric rows plus grouped aggregates for one experiment run.
#[derive(Debug, Clone, Serialize)]
pub struct ExperimentReport {
    pub version: String,
    pub config_fingerprint: String,
    pub aggregates: Vec<AggregateRow>,
    pub rows: Vec<MetricRow>,
    /// Wall time of the run; logged, never serialized, so reruns of the
    /// same manifest produce byte-identical report files.
    #[serde(skip)]
    pub runtime_seconds: f64,
}

impl ExperimentReport {
    pub fn new(rows: Vec<MetricRow>, config_fingerprint: String) -> ExperimentReport {
        let aggregates = compute_aggregates(&rows);
        ExperimentReport {
            version: format!("ecgsr {}", env!("CARGO_PKG_VERSION")),
            config_fingerprint,
            aggregates,
            rows,
            runtime_seconds: 0.0,
        }
    }

    pub fn merged(reports: impl IntoIterator<Item = ExperimentReport>) -> ExperimentReport {
        let mut rows = Vec::new();
        let mut fingerprint = String::new();
        let mut runtime = 0.0;
        for r in reports {
            rows.extend(r.rows);
            fingerprint = r.config_fingerprint;
            runtime += r.runtime_seconds;
        }
        let mut out = ExperimentReport::new(rows, fingerprint);
        out.runtime_seconds = runtime;
        out
    }

    pub fn rows_csv(&self) -> Result<String, csv::Error> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in &self.rows {
            w.serialize(row)?;
        }
        Ok(String::from_utf8(w.into_inner().expect("vec writer")).expect("csv is UTF-8"))
    }

    pub fn json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn write_files(&self, dir: &std::path::Path, stem: &str) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(
            dir.join(format!("{stem}_rows.csv")),
            self.rows_csv().map_err(std::io::Error::other)?,
        )?;
        std::fs::write(dir.join(format!("{stem}.json")), self.json())?;
        Ok(())
    }
}

/// Deterministic grouped statistics; groups are ordered by key so repeated
/// computation over the same rows is identical.
pub fn compute_aggregates(rows: &[MetricRow]) -> Vec<AggregateRow> {
    let mut groups: BTreeMap<(String, String, String), Vec<&MetricRow>> = BTreeMap::new();
    for row in rows {
        groups
            .entry((row.superclass.clone(), row.method.clone(), row.condition.clone()))
            .or_default()
            .push(row);
    }
    groups
        .into_iter()
        .map(|((group, method, condition), members)| {
            let n = members.len();
            let mean = |f: fn(&MetricRow) -> f64| members.iter().map(|r| f(r)).sum::<f64>() / n as f64;
            let mse_mean = mean(|r| r.mse);
            let mse_std = (members.iter().map(|r| (r.mse - mse_mean) * (r.mse - mse_mean)).sum::<f64>()
                / n as f64)
                .sqrt();
            AggregateRow {
                group,
                method,
                condition,
                count: n,
                mse_min: members.iter().map(|r| r.mse).fold(f64::INFINITY, f64::min),
                mse_max: members.iter().map(|r| r.mse).fold(f64::NEG_INFINITY, f64::max),
                mse_mean,
                mse_std,
                rmse_mean: mean(|r| r.rmse),
                ssim_mean: mean(|r| r.ssim),
                snr_db_mean: mean(|r| r.snr_db),
                psnr_db_mean: mean(|r| r.psnr_db),
            }
        })
        .collect()
}

/// Flags the top-1% MSE rows (at least one when any rows exist) and records
/// the flat index of the max-|amplitude| sample of the matching target
/// window for qualitative inspection.
pub fn flag_outliers(rows: &mut [MetricRow], pairs: &[WindowPair]) {
    if rows.is_empty() {
        return;
    }
    let k = (rows.len() / 100).max(1);
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.sort_by(|&a, &b| rows[b].mse.total_cmp(&rows[a].mse).then(a.cmp(&b)));
    let by_id: std::collections::HashMap<String, &WindowPair> =
        pairs.iter().map(|p| (p.window_id(), p)).collect();
    for &idx in order.iter().take(k) {
        rows[idx].outlier = true;
        if let Some(pair) = by_id.get(&rows[idx].window_id) {
            rows[idx].peak_sample = Some(peak_sample_index(&pair.hr));
        }
    }
}

fn peak_sample_index(record: &MultiLeadRecord) -> usize {
    let n = record.len();
    let mut best = (0usize, f64::NEG_INFINITY);
    for (lead, row) in record.leads().iter().enumerate() {
        for (i, &v) in row.iter().enumerate() {
            if v.abs() > best.1 {
                best = (lead * n + i, v.abs());
            }
        }
    }
    best.0
}

/// SHA-256 hex fingerprint of any serializable config.
pub fn fingerprint(value: &impl Serialize) -> String {
    let json = serde_json::to_string(value).expect("config serializes");
    let digest = Sha256::digest(json.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Long-format CSV of one (input, target, prediction) triplet:
/// `series,lead,sample,seconds,value`.
pub fn write_triplet_csv(
    pair: &WindowPair,
    prediction: &MultiLeadRecord,
    mut out: impl Write,
) -> std::io::Result<()> {
    writeln!(out, "series,lead,sample,seconds,value")?;
    let mut dump = |series: &str, rec: &MultiLeadRecord| -> std::io::Result<()> {
        for (lead_idx, row) in rec.leads().iter().enumerate() {
            let lead = crate::signal::Lead::ALL[lead_idx];
            for (i, v) in row.iter().enumerate() {
                writeln!(out, "{series},{lead},{i},{},{v}", i as f64 / rec.fs())?;
            }
        }
        Ok(())
    };
    dump("input_lr", &pair.lr)?;
    dump("target_hr", &pair.hr)?;
    dump("prediction", prediction)
}

/// Wide CSV of activation saliency traces: `sample` plus the 12 input
/// leads plus one column per layer, everything on the LR time base.
pub fn write_activation_csv(
    input: &MultiLeadRecord,
    layers: &[(String, Vec<f64>)],
    mut out: impl Write,
) -> std::io::Result<()> {
    let n = input.len();
    write!(out, "sample")?;
    for lead in crate::signal::Lead::ALL {
        write!(out, ",input_{lead}")?;
    }
    for (name, trace) in layers {
        debug_assert_eq!(trace.len(), n);
        write!(out, ",{name}")?;
    }
    writeln!(out)?;
    for i in 0..n {
        write!(out, "{i}")?;
        for lead in 0..NUM_LEADS {
            write!(out, ",{}", input.lead(lead)[i])?;
        }
        for (_, trace) in layers {
            write!(out, ",{}", trace[i])?;
        }
        writeln!(out)?;
    }
    Ok(())
}
