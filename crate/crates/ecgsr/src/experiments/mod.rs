//! Experiment protocols: the preprocessing pipeline, per-superclass
//! evaluation, non-deep baselines, the missing-channel study, the ablation
//! suite, and activation-map export.

mod pairs_io;
mod report;

pub use pairs_io::{read_pairs, write_pairs, PairsFileError, PAIRS_MAGIC, PAIRS_VERSION};
pub use report::{
    compute_aggregates, fingerprint, flag_outliers, write_activation_csv, write_triplet_csv,
    AggregateRow, ExperimentReport,
};

use crate::dsp::{self, IirFilterSpec};
use crate::ingest;
use crate::metrics::MetricRow;
use crate::model::{train, DcaeSrConfig, DcaeSrModel, LossMode, ModelError};
use crate::signal::{split_windows, Lead, MultiLeadRecord, Superclass, WindowPair};
use crate::synth::{corrupt, derive_seed, synth_ecg, synthetic_superclass, CorruptionPolicy, EcgSynthSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("source produced no records")]
    SourceEmpty,
    #[error("record {id}: sampling rates (lr {lr}, hr {hr}) do not fit the {lr_fs}/{hr_fs} Hz pipeline")]
    FsMismatch { id: String, lr: f64, hr: f64, lr_fs: f64, hr_fs: f64 },
    #[error("no windows to evaluate")]
    EmptySet,
    #[error("unknown baseline method {name:?}")]
    UnknownMethod { name: String },
    #[error("ablation requested with no axes")]
    EmptyAxes,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Dsp(#[from] dsp::DspError),
    #[error(transparent)]
    Synth(#[from] crate::synth::SynthError),
    #[error(transparent)]
    Signal(#[from] crate::signal::SignalError),
    #[error(transparent)]
    Metric(#[from] crate::metrics::MetricError),
    #[error(transparent)]
    Ingest(#[from] ingest::IngestError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Where raw records come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "source")]
pub enum Source {
    /// Synthetic records generated natively at both pipeline rates.
    Synthetic { n_records: usize },
    /// Directory with `records100/<id>.{hea,dat}`, `records500/<id>.{hea,dat}`
    /// and `metadata.csv`.
    WfdbDir { dir: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub source: Source,
    pub window_seconds: f64,
    pub lr_fs: f64,
    pub hr_fs: f64,
    pub policy: CorruptionPolicy,
    /// Root seed for synthetic generation.
    pub seed: u64,
}

impl PipelineConfig {
    pub fn synthetic(n_records: usize, seed: u64, policy: CorruptionPolicy) -> Self {
        Self {
            source: Source::Synthetic { n_records },
            window_seconds: 5.0,
            lr_fs: 50.0,
            hr_fs: 500.0,
            policy,
            seed,
        }
    }
}

/// One record pair entering the pipeline: the LR-rate stream and the
/// HR-rate stream of the same signal.
struct RawRecordPair {
    lr: MultiLeadRecord,
    hr: MultiLeadRecord,
    superclass: Superclass,
    id: String,
}

fn synthetic_records(n_records: usize, seed: u64) -> Vec<RawRecordPair> {
    (0..n_records)
        .map(|i| {
            let record_seed = derive_seed(seed, "synth-record", i as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(record_seed);
            let heart_rate = rng.random_range(55.0..100.0);
            let mut spec = EcgSynthSpec::with_defaults(100.0, 10.0, heart_rate, record_seed);
            let id = format!("synth{i:05}");
            let lr = synth_ecg(&spec).expect("valid synthetic spec");
            spec.fs = 500.0;
            let hr = synth_ecg(&spec).expect("valid synthetic spec");
            let superclass = synthetic_superclass(i);
            RawRecordPair {
                lr: lr.with_record_id_pub(&id).with_superclass_pub(Some(superclass)),
                hr: hr.with_record_id_pub(&id).with_superclass_pub(Some(superclass)),
                superclass,
                id,
            }
        })
        .collect()
}

fn wfdb_records(dir: &std::path::Path) -> Result<Vec<RawRecordPair>, ExperimentError> {
    let metadata = std::fs::read_to_string(dir.join("metadata.csv"))?;
    let index = ingest::read_metadata(&metadata)?;
    let mut out = Vec::new();
    for entry in &index.entries {
        let read = |sub: &str| -> Result<MultiLeadRecord, ExperimentError> {
            let base = dir.join(sub).join(&entry.record_id);
            let header = std::fs::read(base.with_extension("hea"))?;
            let data = std::fs::read(base.with_extension("dat"))?;
            Ok(ingest::read_wfdb16(&header, &data)?)
        };
        out.push(RawRecordPair {
            lr: read("records100")?,
            hr: read("records500")?,
            superclass: entry.superclass,
            id: entry.record_id.clone(),
        });
    }
    Ok(out)
}

/// Runs the published preprocessing on every source record: band-pass
/// 0.05-150 Hz on the HR stream, high-pass 0.05 Hz on the LR stream, 5 s
/// windowing of both, LR decimation down to 50 Hz, then randomized
/// corruption of the LR windows.
pub fn run_preprocessing(config: &PipelineConfig) -> Result<Vec<WindowPair>, ExperimentError> {
    let records = match &config.source {
        Source::Synthetic { n_records } => synthetic_records(*n_records, config.seed),
        Source::WfdbDir { dir } => wfdb_records(dir)?,
    };
    if records.is_empty() {
        return Err(ExperimentError::SourceEmpty);
    }
    let mut pairs = Vec::new();
    for record in &records {
        let lr_src_fs = record.lr.fs();
        let hr_src_fs = record.hr.fs();
        let decim = lr_src_fs / config.lr_fs;
        if hr_src_fs != config.hr_fs || decim.fract() != 0.0 || decim < 2.0 {
            return Err(ExperimentError::FsMismatch {
                id: record.id.clone(),
                lr: lr_src_fs,
                hr: hr_src_fs,
                lr_fs: config.lr_fs,
                hr_fs: config.hr_fs,
            });
        }
        let hr_filtered = dsp::iir_filter(
            &record.hr,
            &IirFilterSpec::bandpass(0.05, 150.0, 4, hr_src_fs),
        )?;
        let lr_filtered =
            dsp::iir_filter(&record.lr, &IirFilterSpec::highpass(0.05, 4, lr_src_fs))?;
        let hr_windows = split_windows(&hr_filtered, config.window_seconds)?;
        let lr_windows = split_windows(&lr_filtered, config.window_seconds)?;
        for (index, (lr_w, hr_w)) in lr_windows.iter().zip(&hr_windows).enumerate() {
            let lr_down = dsp::decimate(lr_w, decim as usize)?;
            let pair = WindowPair::new(
                lr_down,
                hr_w.clone(),
                record.superclass,
                record.id.clone(),
                index as u32,
            )?;
            pairs.push(corrupt(&pair, &config.policy)?);
        }
    }
    Ok(pairs)
}

/// Anything that maps an LR window to a 10x SR estimate. The trait seam
/// keeps the trained model, the classical baselines, and test stubs on the
/// identical metrics path.
pub trait SrInference {
    fn method_name(&self) -> String;
    fn infer_sr(&self, pair: &WindowPair) -> Result<MultiLeadRecord, ExperimentError>;
}

impl SrInference for DcaeSrModel {
    fn method_name(&self) -> String {
        "dcae_sr".into()
    }

    fn infer_sr(&self, pair: &WindowPair) -> Result<MultiLeadRecord, ExperimentError> {
        Ok(self.infer(&pair.lr)?.1)
    }
}

/// The classical upsampling/denoising baselines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineMethod {
    Cubic,
    BandpassCubic,
    FftUpsample,
    WaveletCubic,
    FftFilterCubic,
}

impl BaselineMethod {
    pub const ALL: [BaselineMethod; 5] = [
        BaselineMethod::Cubic,
        BaselineMethod::BandpassCubic,
        BaselineMethod::FftUpsample,
        BaselineMethod::WaveletCubic,
        BaselineMethod::FftFilterCubic,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            BaselineMethod::Cubic => "cubic",
            BaselineMethod::BandpassCubic => "bandpass+cubic",
            BaselineMethod::FftUpsample => "fft_upsample",
            BaselineMethod::WaveletCubic => "wavelet+cubic",
            BaselineMethod::FftFilterCubic => "fftfilter+cubic",
        }
    }
}

impl std::str::FromStr for BaselineMethod {
    type Err = ExperimentError;

    fn from_str(s: &str) -> Result<Self, ExperimentError> {
        Self::ALL
            .iter()
            .copied()
            .find(|m| m.name() == s)
            .ok_or_else(|| ExperimentError::UnknownMethod { name: s.to_string() })
    }
}

impl SrInference for BaselineMethod {
    fn method_name(&self) -> String {
        self.name().into()
    }

    fn infer_sr(&self, pair: &WindowPair) -> Result<MultiLeadRecord, ExperimentError> {
        let lr = &pair.lr;
        let fs = lr.fs();
        // the published 150 Hz upper edge cannot exist below a 50 Hz
        // Nyquist; cap it at 90% of Nyquist
        let high = 150.0f64.min(0.9 * fs / 2.0);
        let out = match self {
            BaselineMethod::Cubic => dsp::cubic_upsample(lr, 10)?,
            BaselineMethod::BandpassCubic => {
                let filtered = dsp::iir_filter(lr, &IirFilterSpec::bandpass(0.5, high, 4, fs))?;
                dsp::cubic_upsample(&filtered, 10)?
            }
            BaselineMethod::FftUpsample => dsp::fft_upsample(lr, 10)?,
            BaselineMethod::WaveletCubic => {
                let denoised = dsp::wavelet_denoise(lr, 4)?;
                dsp::cubic_upsample(&denoised, 10)?
            }
            BaselineMethod::FftFilterCubic => {
                let filtered = dsp::fft_band_filter(lr, 0.5, high)?;
                dsp::cubic_upsample(&filtered, 10)?
            }
        };
        Ok(out)
    }
}

/// Evaluates one inference method over a window set: SR estimate per pair,
/// all five metrics against the HR target, top-MSE outliers flagged, and
/// aggregates grouped by superclass (or one "all" group).
pub fn evaluate(
    method: &dyn SrInference,
    pairs: &[WindowPair],
    group_by_superclass: bool,
    condition: &str,
    config_fingerprint: String,
) -> Result<ExperimentReport, ExperimentError> {
    if pairs.is_empty() {
        return Err(ExperimentError::EmptySet);
    }
    let start = std::time::Instant::now();
    let name = method.method_name();
    let mut rows = Vec::with_capacity(pairs.len());
    for pair in pairs {
        let sr = method.infer_sr(pair)?;
        let group = if group_by_superclass { pair.superclass.name().to_string() } else { "all".into() };
        rows.push(MetricRow::compute(
            pair.window_id(),
            group,
            name.clone(),
            condition,
            sr.leads(),
            pair.hr.leads(),
        )?);
    }
    flag_outliers(&mut rows, pairs);
    let mut report = ExperimentReport::new(rows, config_fingerprint);
    report.runtime_seconds = start.elapsed().as_secs_f64();
    Ok(report)
}

/// Runs each baseline over the pairs; one method group per report.
pub fn run_baselines(
    pairs: &[WindowPair],
    methods: &[BaselineMethod],
    condition: &str,
    config_fingerprint: String,
) -> Result<ExperimentReport, ExperimentError> {
    if pairs.is_empty() {
        return Err(ExperimentError::EmptySet);
    }
    let reports = methods
        .iter()
        .map(|m| evaluate(m, pairs, true, condition, config_fingerprint.clone()))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ExperimentReport::merged(reports))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MissingChannelConfig {
    /// Masking probability p; a channel is zeroed when its draw < p.
    pub missing_rate: f64,
    pub seed: u64,
    /// Restrict masking to one specific lead (per-channel sweeps).
    pub target_channel: Option<Lead>,
}

/// Zero-masks at most one channel per window (seeded draw < p), feeds the
/// masked LR through the model, and reports metrics grouped by masked
/// channel and rate.
pub fn missing_channel_experiment(
    model: &DcaeSrModel,
    pairs: &[WindowPair],
    config: &MissingChannelConfig,
    config_fingerprint: String,
) -> Result<ExperimentReport, ExperimentError> {
    if pairs.is_empty() {
        return Err(ExperimentError::EmptySet);
    }
    let start = std::time::Instant::now();
    let p = config.missing_rate;
    let mut rows = Vec::with_capacity(pairs.len());
    for pair in pairs {
        let mut rng =
            ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &pair.window_id(), 0));
        let masked: Option<Lead> = match config.target_channel {
            Some(lead) => (rng.random::<f64>() < p).then_some(lead),
            None => {
                let mut hit = None;
                for lead in Lead::ALL {
                    if rng.random::<f64>() < p {
                        hit = Some(lead);
                        break;
                    }
                }
                hit
            }
        };
        let lr_masked = match masked {
            Some(lead) => {
                let idx = lead.index();
                let rows_masked: Vec<Vec<f64>> = pair
                    .lr
                    .leads()
                    .iter()
                    .enumerate()
                    .map(|(i, row)| if i == idx { vec![0.0; row.len()] } else { row.clone() })
                    .collect();
                MultiLeadRecord::new(&rows_masked, pair.lr.fs(), pair.lr.record_id(), pair.lr.superclass())?
            }
            None => pair.lr.clone(),
        };
        let (_, sr) = model.infer(&lr_masked)?;
        let condition = format!(
            "p={p},masked={}",
            masked.map_or("none".to_string(), |l| l.to_string())
        );
        rows.push(MetricRow::compute(
            pair.window_id(),
            pair.superclass.name(),
            "dcae_sr",
            condition,
            sr.leads(),
            pair.hr.leads(),
        )?);
    }
    flag_outliers(&mut rows, pairs);
    let mut report = ExperimentReport::new(rows, config_fingerprint);
    report.runtime_seconds = start.elapsed().as_secs_f64();
    Ok(report)
}

/// Ablation axes that can be swept.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationAxis {
    Denoising,
    UseSrDecoder,
    LossMode,
    FinalTanh,
}

impl std::str::FromStr for AblationAxis {
    type Err = ExperimentError;

    fn from_str(s: &str) -> Result<Self, ExperimentError> {
        match s {
            "denoising" => Ok(AblationAxis::Denoising),
            "use_sr_decoder" => Ok(AblationAxis::UseSrDecoder),
            "loss_mode" => Ok(AblationAxis::LossMode),
            "final_tanh" => Ok(AblationAxis::FinalTanh),
            other => Err(ExperimentError::UnknownMethod { name: other.to_string() }),
        }
    }
}

/// All config variants spanned by the requested axes (Cartesian product),
/// starting from `base`. A variant without the SR decoder is forced to the
/// LR-only loss, mirroring the published protocol, and duplicates after
/// that sanitization collapse.
pub fn ablation_variants(
    base: &DcaeSrConfig,
    axes: &[AblationAxis],
) -> Result<Vec<DcaeSrConfig>, ExperimentError> {
    if axes.is_empty() {
        return Err(ExperimentError::EmptyAxes);
    }
    let mut variants = vec![base.clone()];
    for axis in axes {
        let mut next = Vec::new();
        for variant in &variants {
            match axis {
                AblationAxis::Denoising => {
                    for v in [true, false] {
                        next.push(DcaeSrConfig { denoising: v, ..variant.clone() });
                    }
                }
                AblationAxis::UseSrDecoder => {
                    for v in [true, false] {
                        next.push(DcaeSrConfig { use_sr_decoder: v, ..variant.clone() });
                    }
                }
                AblationAxis::LossMode => {
                    for v in [LossMode::Lr, LossMode::Hr, LossMode::LrPlusHr] {
                        next.push(DcaeSrConfig { loss_mode: v, ..variant.clone() });
                    }
                }
                AblationAxis::FinalTanh => {
                    for v in [true, false] {
                        next.push(DcaeSrConfig { final_tanh: v, ..variant.clone() });
                    }
                }
            }
        }
        variants = next;
    }
    for v in variants.iter_mut() {
        if !v.use_sr_decoder {
            v.loss_mode = LossMode::Lr;
        }
    }
    variants.dedup_by(|a, b| a == b);
    let mut unique = Vec::new();
    for v in variants {
        if !unique.contains(&v) {
            unique.push(v);
        }
    }
    Ok(unique)
}

fn variant_name(config: &DcaeSrConfig) -> String {
    format!(
        "dcae[den={},sr={},loss={},tanh={}]",
        config.denoising as u8,
        config.use_sr_decoder as u8,
        match config.loss_mode {
            LossMode::Lr => "lr",
            LossMode::Hr => "hr",
            LossMode::LrPlusHr => "lr+hr",
        },
        config.final_tanh as u8
    )
}

struct NamedModel<'a> {
    model: &'a DcaeSrModel,
    name: String,
}

impl SrInference for NamedModel<'_> {
    fn method_name(&self) -> String {
        self.name.clone()
    }

    fn infer_sr(&self, pair: &WindowPair) -> Result<MultiLeadRecord, ExperimentError> {
        Ok(self.model.infer(&pair.lr)?.1)
    }
}

/// Trains every variant from the same seed and evaluates it on the
/// corrupted and clean versions of the test split. A denoising=false
/// variant trains on the uncorrupted pairs (the plain-autoencoder
/// protocol); denoising=true trains on the corrupted ones.
pub fn ablation_suite(
    base: &DcaeSrConfig,
    axes: &[AblationAxis],
    train_pairs: &[WindowPair],
    test_pairs: &[WindowPair],
    config_fingerprint: String,
) -> Result<ExperimentReport, ExperimentError> {
    if train_pairs.is_empty() || test_pairs.is_empty() {
        return Err(ExperimentError::EmptySet);
    }
    let variants = ablation_variants(base, axes)?;
    let clean_train: Vec<WindowPair> = train_pairs.iter().map(|p| p.to_clean()).collect();
    let clean_test: Vec<WindowPair> = test_pairs.iter().map(|p| p.to_clean()).collect();
    let mut reports = Vec::new();
    for config in &variants {
        let model = DcaeSrModel::build(config.clone())?;
        let training_set: &[WindowPair] =
            if config.denoising { train_pairs } else { &clean_train };
        train(&model, training_set, None, None, |_| {})?;
        let named = NamedModel { model: &model, name: variant_name(config) };
        reports.push(evaluate(&named, test_pairs, true, "corrupted", config_fingerprint.clone())?);
        reports.push(evaluate(&named, &clean_test, true, "clean", config_fingerprint.clone())?);
    }
    Ok(ExperimentReport::merged(reports))
}

/// Per-layer saliency traces on the input time base: mean of absolute
/// activations across channels, linearly resampled to the LR length.
pub fn activation_maps(
    model: &DcaeSrModel,
    pair: &WindowPair,
) -> Result<Vec<(String, Vec<f64>)>, ExperimentError> {
    let traces = model.infer_traces(&pair.lr)?;
    let n = pair.lr.len();
    Ok(traces
        .into_iter()
        .map(|trace| {
            let mut saliency = vec![0.0; trace.len];
            for c in 0..trace.channels {
                for (t, s) in saliency.iter_mut().enumerate() {
                    *s += trace.data[c * trace.len + t].abs();
                }
            }
            for s in saliency.iter_mut() {
                *s /= trace.channels as f64;
            }
            (trace.name, resample_linear(&saliency, n))
        })
        .collect())
}

/// Linear interpolation of `x` onto `out_len` uniformly spaced points
/// spanning the same extent.
fn resample_linear(x: &[f64], out_len: usize) -> Vec<f64> {
    if x.len() == out_len {
        return x.to_vec();
    }
    let scale = (x.len() - 1) as f64 / (out_len - 1).max(1) as f64;
    (0..out_len)
        .map(|j| {
            let pos = j as f64 * scale;
            let i = (pos.floor() as usize).min(x.len() - 2);
            let frac = pos - i as f64;
            x[i] * (1.0 - frac) + x[i + 1] * frac
        })
        .collect()
}

impl MultiLeadRecord {
    fn with_record_id_pub(self, id: &str) -> MultiLeadRecord {
        self.with_record_id(id.to_string())
    }

    fn with_superclass_pub(self, superclass: Option<Superclass>) -> MultiLeadRecord {
        self.with_superclass(superclass)
    }
}
