//! The dual-decoder convolutional autoencoder: one encoder, a decoder that
//! reconstructs the 50 Hz input, and a transposed-convolution decoder that
//! produces the 500 Hz output, trained with a summed MSE objective.

use crate::nn::{
    self, backward, conv_transpose_out_len, init_conv_weight, ops, read_checkpoint,
    write_checkpoint, AdamState, CheckpointEntry, NnError, Tensor,
};
use crate::signal::{MultiLeadRecord, WindowPair, NUM_LEADS};
use crate::synth::derive_seed;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("width multiplier {num}/{den} makes channel count {channels} non-integral")]
    BadWidth { num: u32, den: u32, channels: u32 },
    #[error("loss mode {mode:?} needs the SR decoder, but use_sr_decoder = false")]
    ModeConflict { mode: LossMode },
    #[error("training set is empty")]
    EmptyDataset,
    #[error("batch size must be 1, got {0}")]
    BadBatchSize(u32),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Dsp(#[from] crate::dsp::DspError),
    #[error(transparent)]
    Signal(#[from] crate::signal::SignalError),
    #[error("checkpoint: {0}")]
    Checkpoint(#[from] nn::CheckpointError),
    #[error("checkpoint does not match model: {context}")]
    CheckpointMismatch { context: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Exact rational width multiplier, e.g. `1`, `1/4`, `1/48`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ratio {
    pub num: u32,
    pub den: u32,
}

impl Ratio {
    pub const ONE: Ratio = Ratio { num: 1, den: 1 };

    pub fn scale(&self, channels: u32) -> Option<u32> {
        let scaled = channels as u64 * self.num as u64;
        if scaled % self.den as u64 != 0 || scaled == 0 {
            return None;
        }
        Some((scaled / self.den as u64) as u32)
    }
}

impl std::fmt::Display for Ratio {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.den == 1 {
            write!(f, "{}", self.num)
        } else {
            write!(f, "{}/{}", self.num, self.den)
        }
    }
}

impl std::str::FromStr for Ratio {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let parse = |v: &str| v.trim().parse::<u32>().map_err(|e| format!("bad ratio {s:?}: {e}"));
        match s.split_once('/') {
            Some((n, d)) => {
                let (num, den) = (parse(n)?, parse(d)?);
                if den == 0 {
                    return Err(format!("bad ratio {s:?}: zero denominator"));
                }
                Ok(Ratio { num, den })
            }
            None => Ok(Ratio { num: parse(s)?, den: 1 }),
        }
    }
}

impl Serialize for Ratio {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Ratio {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        raw.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    Lr,
    Hr,
    LrPlusHr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

/// Every switch of the architecture and training loop. Field names double
/// as the config-file keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DcaeSrConfig {
    pub width_multiplier: Ratio,
    /// Train the LR branch against the clean window (true) or against the
    /// possibly-corrupted input itself (false).
    pub denoising: bool,
    pub use_sr_decoder: bool,
    pub loss_mode: LossMode,
    /// Tanh after the last layer of each decoder.
    pub final_tanh: bool,
    pub inner_activation: Activation,
    pub dropout_rate: f64,
    pub lr: f64,
    pub epochs: u32,
    pub batch_size: u32,
    pub seed: u64,
    pub loss_weight_lr: f64,
    pub loss_weight_hr: f64,
    /// Optional per-window min-max normalization of the input to [-1, 1]
    /// (outputs are mapped back); interacts with the final-tanh switch.
    pub normalize_input: bool,
    pub lr_window_len: usize,
}

impl Default for DcaeSrConfig {
    fn default() -> Self {
        Self {
            width_multiplier: Ratio::ONE,
            denoising: true,
            use_sr_decoder: true,
            loss_mode: LossMode::LrPlusHr,
            final_tanh: false,
            inner_activation: Activation::Relu,
            dropout_rate: 0.1,
            lr: 1e-4,
            epochs: 20,
            batch_size: 1,
            seed: 0,
            loss_weight_lr: 1.0,
            loss_weight_hr: 1.0,
            normalize_input: false,
            lr_window_len: 250,
        }
    }
}

/// One convolutional layer of a section.
pub struct ConvLayer {
    pub name: String,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub dropout: Option<f64>,
    pub transposed: bool,
    /// Last layer of a decoder: final-activation rules apply, no inner
    /// activation.
    pub is_final: bool,
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct LayerReport {
    pub name: String,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub dropout: Option<f64>,
    pub transposed: bool,
    pub output_len: usize,
}

/// Per-layer shapes plus the SR chain geometry, emitted as JSON by `build`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ShapeReport {
    pub lr_window_len: usize,
    pub latent_channels: usize,
    pub latent_len: usize,
    pub sr_raw_len: usize,
    pub sr_output_len: usize,
    pub crop_per_side: usize,
    pub parameter_count: usize,
    pub layers: Vec<LayerReport>,
}

pub struct DcaeSrModel {
    pub config: DcaeSrConfig,
    pub encoder: Vec<ConvLayer>,
    pub decoder_lr: Vec<ConvLayer>,
    pub decoder_sr: Vec<ConvLayer>,
}

/// Recipe row: (name, in, out, kernel, stride, padding, dropout, transposed, final).
type LayerRecipe = (&'static str, u32, u32, usize, usize, usize, Option<f64>, bool, bool);

/// Channel counts and geometry exactly as published; inner channel counts
/// scale with the width multiplier, the 12 lead channels never do.
fn recipes(w: Ratio, dropout: f64) -> Result<[Vec<LayerRecipe>; 3], ModelError> {
    let scale = |c: u32| w.scale(c).ok_or(ModelError::BadWidth { num: w.num, den: w.den, channels: c });
    let c192 = scale(192)?;
    let c384 = scale(384)?;
    let c768 = scale(768)?;
    let d = Some(dropout);
    let encoder = vec![
        ("encoder.block1.conv1", 12, 12, 3, 1, 1, d, false, false),
        ("encoder.block1.conv2", 12, c192, 3, 1, 1, d, false, false),
        ("encoder.block2.conv1", c192, c384, 3, 1, 1, d, false, false),
        ("encoder.block2.conv2", c384, c768, 3, 1, 1, d, false, false),
    ];
    let decoder_lr = vec![
        ("decoder.block1.tconv1", c768, c768, 3, 1, 1, d, true, false),
        ("decoder.block1.tconv2", c768, c384, 3, 1, 1, d, true, false),
        ("decoder.block2.tconv1", c384, c192, 3, 1, 1, d, true, false),
        ("decoder.block2.tconv2", c192, 12, 3, 1, 1, None, true, true),
    ];
    let decoder_sr = vec![
        ("decoder_sr.block1.tconv1", c768, c768, 30, 5, 0, d, true, false),
        ("decoder_sr.block1.tconv2", c768, c384, 30, 2, 0, d, true, false),
        ("decoder_sr.block2.tconv1", c384, c192, 10, 1, 0, d, true, false),
        ("decoder_sr.block2.tconv2", c192, 12, 4, 1, 0, None, true, true),
    ];
    Ok([encoder, decoder_lr, decoder_sr])
}

fn build_section(recipe: &[LayerRecipe], rng: &mut ChaCha8Rng) -> Vec<ConvLayer> {
    recipe
        .iter()
        .map(|&(name, in_ch, out_ch, kernel, stride, padding, dropout, transposed, is_final)| {
            let (in_ch, out_ch) = (in_ch as usize, out_ch as usize);
            let shape = if transposed { [in_ch, out_ch, kernel] } else { [out_ch, in_ch, kernel] };
            let weight = init_conv_weight(rng, shape, in_ch * kernel);
            let bias = Tensor::param(&[out_ch], vec![0.0; out_ch]).expect("bias shape");
            ConvLayer {
                name: name.to_string(),
                in_ch,
                out_ch,
                kernel,
                stride,
                padding,
                dropout,
                transposed,
                is_final,
                weight,
                bias,
            }
        })
        .collect()
}

impl DcaeSrModel {
    /// Creates and seed-initializes all parameters.
    pub fn build(config: DcaeSrConfig) -> Result<DcaeSrModel, ModelError> {
        if config.batch_size != 1 {
            return Err(ModelError::BadBatchSize(config.batch_size));
        }
        let recipe = recipes(config.width_multiplier, config.dropout_rate)?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "init", 0));
        let encoder = build_section(&recipe[0], &mut rng);
        let decoder_lr = build_section(&recipe[1], &mut rng);
        let decoder_sr = build_section(&recipe[2], &mut rng);
        Ok(DcaeSrModel { config, encoder, decoder_lr, decoder_sr })
    }

    fn sections(&self) -> [&Vec<ConvLayer>; 3] {
        [&self.encoder, &self.decoder_lr, &self.decoder_sr]
    }

    pub fn parameters(&self) -> Vec<Tensor> {
        let mut out = Vec::new();
        for section in self.sections() {
            for layer in section {
                out.push(layer.weight.clone());
                out.push(layer.bias.clone());
            }
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|p| p.len()).sum()
    }

    pub fn zero_grads(&self) {
        for p in self.parameters() {
            p.zero_grad();
        }
    }

    /// SR chain output length before cropping, for an input of length `l`.
    pub fn sr_raw_len(&self, l: usize) -> usize {
        let mut len = l;
        for layer in &self.decoder_sr {
            len = conv_transpose_out_len(len, layer.kernel, layer.stride, layer.padding)
                .expect("SR geometry grows");
        }
        len
    }

    pub fn shape_report(&self) -> ShapeReport {
        let l = self.config.lr_window_len;
        let mut layers = Vec::new();
        let mut lens = [l, l, l];
        for (section_idx, section) in self.sections().into_iter().enumerate() {
            for layer in section {
                let len = &mut lens[section_idx];
                *len = if layer.transposed {
                    conv_transpose_out_len(*len, layer.kernel, layer.stride, layer.padding)
                        .expect("valid geometry")
                } else {
                    nn::conv_out_len(*len, layer.kernel, layer.stride, layer.padding)
                        .expect("valid geometry")
                };
                layers.push(LayerReport {
                    name: layer.name.clone(),
                    in_channels: layer.in_ch,
                    out_channels: layer.out_ch,
                    kernel: layer.kernel,
                    stride: layer.stride,
                    padding: layer.padding,
                    dropout: layer.dropout,
                    transposed: layer.transposed,
                    output_len: *len,
                });
            }
        }
        let sr_raw = lens[2];
        let sr_out = 10 * l;
        ShapeReport {
            lr_window_len: l,
            latent_channels: self.encoder.last().expect("encoder nonempty").out_ch,
            latent_len: lens[0],
            sr_raw_len: sr_raw,
            sr_output_len: sr_out,
            crop_per_side: (sr_raw - sr_out) / 2,
            parameter_count: self.parameter_count(),
            layers,
        }
    }

    fn forward_section(
        &self,
        section: &[ConvLayer],
        input: &Tensor,
        training: bool,
        step: u64,
        traces: Option<&mut Vec<LayerTrace>>,
    ) -> Result<Tensor, ModelError> {
        let mut x = input.clone();
        let mut traces = traces;
        for layer in section {
            x = if layer.transposed {
                ops::conv_transpose1d(&x, &layer.weight, Some(&layer.bias), layer.stride, layer.padding)?
            } else {
                ops::conv1d(&x, &layer.weight, Some(&layer.bias), layer.stride, layer.padding)?
            };
            x = if layer.is_final {
                if self.config.final_tanh {
                    ops::tanh(&x)
                } else {
                    x
                }
            } else {
                match self.config.inner_activation {
                    Activation::Relu => ops::relu(&x),
                    Activation::Tanh => ops::tanh(&x),
                }
            };
            if let Some(list) = traces.as_deref_mut() {
                list.push(LayerTrace {
                    name: layer.name.clone(),
                    channels: layer.out_ch,
                    len: x.len() / layer.out_ch,
                    data: x.to_vec(),
                });
            }
            if let (Some(rate), true) = (layer.dropout, training) {
                let seed = derive_seed(self.config.seed, &layer.name, step);
                x = ops::dropout(&x, rate, true, seed)?;
            }
        }
        Ok(x)
    }

    /// Encoder forward; length-preserving (stride 1, padding (k-1)/2).
    pub fn encode(&self, lr_window: &Tensor, training: bool, step: u64) -> Result<Tensor, ModelError> {
        self.forward_section(&self.encoder, lr_window, training, step, None)
    }

    /// LR-reconstruction decoder forward.
    pub fn decode_lr(&self, latent: &Tensor, training: bool, step: u64) -> Result<Tensor, ModelError> {
        self.forward_section(&self.decoder_lr, latent, training, step, None)
    }

    /// SR decoder forward: raw transposed chain then a symmetric center crop
    /// to exactly 10x the latent length.
    pub fn decode_sr(&self, latent: &Tensor, training: bool, step: u64) -> Result<Tensor, ModelError> {
        let raw = self.forward_section(&self.decoder_sr, latent, training, step, None)?;
        let l = latent.shape()[1];
        let target = 10 * l;
        let raw_len = raw.shape()[1];
        let crop = (raw_len - target) / 2;
        Ok(ops::crop_time(&raw, crop, target)?)
    }

    /// Both branch losses plus the combined objective for one window.
    pub fn forward_losses(
        &self,
        lr_input: &Tensor,
        lr_target: &Tensor,
        hr_target: &Tensor,
        training: bool,
        step: u64,
    ) -> Result<StepLosses, ModelError> {
        let needs_sr = matches!(self.config.loss_mode, LossMode::Hr | LossMode::LrPlusHr);
        if needs_sr && !self.config.use_sr_decoder {
            return Err(ModelError::ModeConflict { mode: self.config.loss_mode });
        }
        let latent = self.encode(lr_input, training, step)?;
        let loss_lr = match self.config.loss_mode {
            LossMode::Lr | LossMode::LrPlusHr => {
                let recon = self.decode_lr(&latent, training, step)?;
                Some(ops::mse(&recon, lr_target)?)
            }
            LossMode::Hr => None,
        };
        let loss_sr = match self.config.loss_mode {
            LossMode::Hr | LossMode::LrPlusHr => {
                let sr = self.decode_sr(&latent, training, step)?;
                Some(ops::mse(&sr, hr_target)?)
            }
            LossMode::Lr => None,
        };
        let total = match (&loss_lr, &loss_sr) {
            (Some(lr), Some(sr)) => ops::add(
                &ops::scale(lr, self.config.loss_weight_lr),
                &ops::scale(sr, self.config.loss_weight_hr),
            )?,
            (Some(lr), None) => lr.clone(),
            (None, Some(sr)) => sr.clone(),
            (None, None) => unreachable!("loss mode selects at least one branch"),
        };
        Ok(StepLosses { loss_lr, loss_sr, total })
    }

    /// One optimization step on one window.
    pub fn train_step(
        &self,
        adam: &mut AdamState,
        lr_input: &MultiLeadRecord,
        lr_target: &MultiLeadRecord,
        hr_target: &MultiLeadRecord,
        step: u64,
    ) -> Result<(Option<f64>, Option<f64>), ModelError> {
        let norm = self.input_affine(lr_input);
        let losses = self.forward_losses(
            &record_to_tensor(lr_input, norm),
            &record_to_tensor(lr_target, norm),
            &record_to_tensor(hr_target, norm),
            true,
            step,
        )?;
        backward(&losses.total)?;
        adam.step(&self.parameters(), self.config.lr)?;
        self.zero_grads();
        Ok((losses.loss_lr.map(|t| t.item()), losses.loss_sr.map(|t| t.item())))
    }

    /// Per-window affine (center, half-range) when input normalization is
    /// enabled; identity otherwise.
    fn input_affine(&self, lr: &MultiLeadRecord) -> (f64, f64) {
        if !self.config.normalize_input {
            return (0.0, 1.0);
        }
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for row in lr.leads() {
            for &v in row {
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        let center = 0.5 * (lo + hi);
        let half = (0.5 * (hi - lo)).max(1e-9);
        (center, half)
    }

    /// Deterministic evaluation-mode forward: returns the LR reconstruction
    /// and the SR signal. Without the SR decoder the SR output is the LR
    /// reconstruction cubic-upsampled by 10.
    pub fn infer(&self, lr_window: &MultiLeadRecord) -> Result<(MultiLeadRecord, MultiLeadRecord), ModelError> {
        let norm = self.input_affine(lr_window);
        let input = record_to_tensor(lr_window, norm);
        let latent = self.encode(&input, false, 0)?;
        let recon = self.decode_lr(&latent, false, 0)?;
        let lr_out = tensor_to_record(&recon, lr_window.fs(), lr_window.record_id(), norm)?;
        let sr_out = if self.config.use_sr_decoder {
            let sr = self.decode_sr(&latent, false, 0)?;
            tensor_to_record(&sr, lr_window.fs() * 10.0, lr_window.record_id(), norm)?
        } else {
            crate::dsp::cubic_upsample(&lr_out, 10)?
        };
        Ok((lr_out, sr_out))
    }

    /// Evaluation-mode forward capturing every post-activation tensor.
    pub fn infer_traces(&self, lr_window: &MultiLeadRecord) -> Result<Vec<LayerTrace>, ModelError> {
        let norm = self.input_affine(lr_window);
        let input = record_to_tensor(lr_window, norm);
        let mut traces = Vec::new();
        let latent = self.forward_section(&self.encoder, &input, false, 0, Some(&mut traces))?;
        self.forward_section(&self.decoder_lr, &latent, false, 0, Some(&mut traces))?;
        if self.config.use_sr_decoder {
            self.forward_section(&self.decoder_sr, &latent, false, 0, Some(&mut traces))?;
        }
        Ok(traces)
    }

    pub fn checkpoint_entries(&self) -> Vec<CheckpointEntry> {
        let mut out = Vec::new();
        for section in self.sections() {
            for layer in section {
                out.push(CheckpointEntry {
                    name: format!("{}.weight", layer.name),
                    shape: layer.weight.shape().to_vec(),
                    data: layer.weight.to_vec(),
                });
                out.push(CheckpointEntry {
                    name: format!("{}.bias", layer.name),
                    shape: layer.bias.shape().to_vec(),
                    data: layer.bias.to_vec(),
                });
            }
        }
        out
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<(), ModelError> {
        std::fs::write(path, write_checkpoint(&self.checkpoint_entries()))?;
        Ok(())
    }

    pub fn load_checkpoint_bytes(&self, bytes: &[u8]) -> Result<(), ModelError> {
        let entries = read_checkpoint(bytes)?;
        let mut by_name: std::collections::HashMap<&str, &CheckpointEntry> =
            entries.iter().map(|e| (e.name.as_str(), e)).collect();
        for section in self.sections() {
            for layer in section {
                for (suffix, tensor) in
                    [("weight", &layer.weight), ("bias", &layer.bias)]
                {
                    let name = format!("{}.{suffix}", layer.name);
                    let entry = by_name.remove(name.as_str()).ok_or_else(|| {
                        ModelError::CheckpointMismatch { context: format!("missing {name}") }
                    })?;
                    if entry.shape != tensor.shape() {
                        return Err(ModelError::CheckpointMismatch {
                            context: format!(
                                "{name}: shape {:?} vs model {:?}",
                                entry.shape,
                                tensor.shape()
                            ),
                        });
                    }
                    tensor.update_data(|data| data.copy_from_slice(&entry.data));
                }
            }
        }
        if let Some(stray) = by_name.keys().next() {
            return Err(ModelError::CheckpointMismatch {
                context: format!("unknown entry {stray}"),
            });
        }
        Ok(())
    }

    pub fn load_checkpoint(&self, path: &Path) -> Result<(), ModelError> {
        self.load_checkpoint_bytes(&std::fs::read(path)?)
    }
}

pub struct StepLosses {
    pub loss_lr: Option<Tensor>,
    pub loss_sr: Option<Tensor>,
    pub total: Tensor,
}

/// One captured post-activation tensor.
pub struct LayerTrace {
    pub name: String,
    pub channels: usize,
    pub len: usize,
    pub data: Vec<f64>,
}

pub fn record_to_tensor(record: &MultiLeadRecord, (center, half): (f64, f64)) -> Tensor {
    let mut flat = Vec::with_capacity(NUM_LEADS * record.len());
    for row in record.leads() {
        flat.extend(row.iter().map(|v| (v - center) / half));
    }
    Tensor::new(&[NUM_LEADS, record.len()], flat).expect("record shape is consistent")
}

pub fn tensor_to_record(
    t: &Tensor,
    fs: f64,
    id: &str,
    (center, half): (f64, f64),
) -> Result<MultiLeadRecord, ModelError> {
    let l = t.shape()[1];
    let data = t.data();
    let rows: Vec<Vec<f64>> =
        (0..NUM_LEADS).map(|i| data[i * l..(i + 1) * l].iter().map(|v| v * half + center).collect()).collect();
    Ok(MultiLeadRecord::new(&rows, fs, id, None)?)
}

#[derive(Debug, Clone, Serialize)]
pub struct EpochStats {
    pub epoch: u32,
    pub mean_loss_lr: Option<f64>,
    pub mean_loss_sr: Option<f64>,
    pub val_sr_mse: Option<f64>,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
}

/// Full training loop: seeded shuffle per epoch, one step per pair, the
/// last checkpoint rewritten every epoch and the best-by-validation-SR-MSE
/// checkpoint kept alongside it.
pub fn train(
    model: &DcaeSrModel,
    pairs: &[WindowPair],
    val_pairs: Option<&[WindowPair]>,
    out_dir: Option<&Path>,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainHistory, ModelError> {
    use rand::seq::SliceRandom;
    if pairs.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
    }
    let mut adam = AdamState::new(&model.parameters());
    let mut history = TrainHistory::default();
    let mut step: u64 = 0;
    let mut best_val = f64::INFINITY;
    for epoch in 0..model.config.epochs {
        let start = std::time::Instant::now();
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        let mut rng =
            ChaCha8Rng::seed_from_u64(derive_seed(model.config.seed, "epoch-shuffle", epoch as u64));
        order.shuffle(&mut rng);
        let mut sum_lr = 0.0;
        let mut n_lr = 0usize;
        let mut sum_sr = 0.0;
        let mut n_sr = 0usize;
        for &idx in &order {
            let pair = &pairs[idx];
            let lr_target = if model.config.denoising { pair.lr_target() } else { &pair.lr };
            let (loss_lr, loss_sr) = model.train_step(&mut adam, &pair.lr, lr_target, &pair.hr, step)?;
            if let Some(v) = loss_lr {
                sum_lr += v;
                n_lr += 1;
            }
            if let Some(v) = loss_sr {
                sum_sr += v;
                n_sr += 1;
            }
            step += 1;
        }
        let val_sr_mse = match val_pairs {
            Some(val) if !val.is_empty() => Some(validation_sr_mse(model, val)?),
            _ => None,
        };
        if let Some(dir) = out_dir {
            model.save_checkpoint(&dir.join("last.ckpt"))?;
            if let Some(v) = val_sr_mse {
                if v < best_val {
                    best_val = v;
                    model.save_checkpoint(&dir.join("best.ckpt"))?;
                }
            }
        }
        let stats = EpochStats {
            epoch,
            mean_loss_lr: (n_lr > 0).then(|| sum_lr / n_lr as f64),
            mean_loss_sr: (n_sr > 0).then(|| sum_sr / n_sr as f64),
            val_sr_mse,
            wall_seconds: start.elapsed().as_secs_f64(),
        };
        on_epoch(&stats);
        history.epochs.push(stats);
    }
    Ok(history)
}

/// Mean SR MSE of the model over a validation set (evaluation mode).
pub fn validation_sr_mse(model: &DcaeSrModel, pairs: &[WindowPair]) -> Result<f64, ModelError> {
    let mut sum = 0.0;
    for pair in pairs {
        let (_, sr) = model.infer(&pair.lr)?;
        sum += crate::metrics::mse_matrix(sr.leads(), pair.hr.leads());
    }
    Ok(sum / pairs.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{make_record, Superclass};

    fn tiny_config() -> DcaeSrConfig {
        DcaeSrConfig {
            width_multiplier: Ratio { num: 1, den: 48 },
            lr_window_len: 20,
            dropout_rate: 0.1,
            seed: 7,
            ..Default::default()
        }
    }

    fn window(fs: f64, n: usize, seed: u64) -> MultiLeadRecord {
        let rows: Vec<Vec<f64>> = (0..NUM_LEADS)
            .map(|l| (0..n).map(|i| (((l as u64 + 3) * (i as u64 + seed)) as f64 * 0.01).sin()).collect())
            .collect();
        make_record(&rows, fs, format!("w{seed}"), None).unwrap()
    }

    fn tiny_pair(seed: u64) -> WindowPair {
        WindowPair::new(
            window(50.0, 20, seed),
            window(500.0, 200, seed + 1000),
            Superclass::Mi,
            format!("w{seed}"),
            0,
        )
        .unwrap()
    }

    #[test]
    fn width_scaling_rules() {
        assert_eq!(Ratio { num: 1, den: 48 }.scale(768), Some(16));
        assert_eq!(Ratio { num: 1, den: 48 }.scale(12), None);
        assert_eq!("1/8".parse::<Ratio>().unwrap(), Ratio { num: 1, den: 8 });
        assert_eq!("2".parse::<Ratio>().unwrap(), Ratio { num: 2, den: 1 });
        assert!("0/3".parse::<Ratio>().unwrap().scale(192).is_none());
        // 1/7 does not divide the published channel counts
        let bad = DcaeSrConfig {
            width_multiplier: Ratio { num: 1, den: 7 },
            ..Default::default()
        };
        assert!(matches!(DcaeSrModel::build(bad), Err(ModelError::BadWidth { .. })));
    }

    #[test]
    fn encode_decode_shapes_at_tiny_width() {
        let model = DcaeSrModel::build(tiny_config()).unwrap();
        let x = record_to_tensor(&window(50.0, 20, 1), (0.0, 1.0));
        let latent = model.encode(&x, false, 0).unwrap();
        assert_eq!(latent.shape(), &[16, 20]);
        let recon = model.decode_lr(&latent, false, 0).unwrap();
        assert_eq!(recon.shape(), &[12, 20]);
        let sr = model.decode_sr(&latent, false, 0).unwrap();
        assert_eq!(sr.shape(), &[12, 200]);
        assert_eq!(model.sr_raw_len(20), 290);
    }

    #[test]
    fn shape_report_matches_published_geometry() {
        let model = DcaeSrModel::build(DcaeSrConfig::default()).unwrap();
        let report = model.shape_report();
        assert_eq!(report.latent_channels, 768);
        assert_eq!(report.latent_len, 250);
        assert_eq!(report.sr_raw_len, 2590);
        assert_eq!(report.sr_output_len, 2500);
        assert_eq!(report.crop_per_side, 45);
        let sr_kernels: Vec<usize> =
            report.layers.iter().filter(|l| l.name.starts_with("decoder_sr")).map(|l| l.kernel).collect();
        assert_eq!(sr_kernels, vec![30, 30, 10, 4]);
        let sr_strides: Vec<usize> =
            report.layers.iter().filter(|l| l.name.starts_with("decoder_sr")).map(|l| l.stride).collect();
        assert_eq!(sr_strides, vec![5, 2, 1, 1]);
    }

    #[test]
    fn final_tanh_bounds_outputs() {
        let mut config = tiny_config();
        config.final_tanh = true;
        let model = DcaeSrModel::build(config).unwrap();
        let (lr_out, sr_out) = model.infer(&window(50.0, 20, 3)).unwrap();
        for row in lr_out.leads().iter().chain(sr_out.leads().iter()) {
            assert!(row.iter().all(|v| v.abs() < 1.0));
        }
    }

    #[test]
    fn inference_is_deterministic_and_finite() {
        let model = DcaeSrModel::build(tiny_config()).unwrap();
        let input = window(50.0, 20, 5);
        let (a_lr, a_sr) = model.infer(&input).unwrap();
        let (b_lr, b_sr) = model.infer(&input).unwrap();
        assert_eq!(a_lr, b_lr);
        assert_eq!(a_sr, b_sr);
        // untrained model on a zero window stays finite
        let zeros = make_record(&vec![vec![0.0; 20]; 12], 50.0, "z", None).unwrap();
        let (lr_out, sr_out) = model.infer(&zeros).unwrap();
        assert!(lr_out.leads().iter().all(|r| r.iter().all(|v| v.is_finite())));
        assert!(sr_out.leads().iter().all(|r| r.iter().all(|v| v.is_finite())));
    }

    #[test]
    fn mode_conflict_detected() {
        let mut config = tiny_config();
        config.use_sr_decoder = false;
        config.loss_mode = LossMode::Hr;
        let model = DcaeSrModel::build(config).unwrap();
        let pair = tiny_pair(1);
        let mut adam = AdamState::new(&model.parameters());
        let err = model.train_step(&mut adam, &pair.lr, &pair.lr, &pair.hr, 0);
        assert!(matches!(err, Err(ModelError::ModeConflict { .. })));
    }

    #[test]
    fn loss_mode_gradient_flow() {
        // LR-only loss leaves SR parameters without gradient; HR-only loss
        // leaves the LR decoder without gradient.
        for (mode, quiet_section) in [(LossMode::Lr, 2usize), (LossMode::Hr, 1usize)] {
            let mut config = tiny_config();
            config.loss_mode = mode;
            let model = DcaeSrModel::build(config).unwrap();
            let pair = tiny_pair(2);
            let losses = model
                .forward_losses(
                    &record_to_tensor(&pair.lr, (0.0, 1.0)),
                    &record_to_tensor(&pair.lr, (0.0, 1.0)),
                    &record_to_tensor(&pair.hr, (0.0, 1.0)),
                    true,
                    0,
                )
                .unwrap();
            backward(&losses.total).unwrap();
            let quiet = model.sections()[quiet_section];
            for layer in quiet {
                assert!(layer.weight.grad().is_none(), "{mode:?}: {} got a gradient", layer.name);
            }
            let encoder_has_grads =
                model.encoder.iter().all(|l| l.weight.grad().is_some());
            assert!(encoder_has_grads);
        }
    }

    #[test]
    fn dual_loss_encoder_gradient_is_sum_of_single_modes() {
        let grads_for = |mode: LossMode| {
            let mut config = tiny_config();
            config.loss_mode = mode;
            let model = DcaeSrModel::build(config).unwrap();
            let pair = tiny_pair(3);
            let losses = model
                .forward_losses(
                    &record_to_tensor(&pair.lr, (0.0, 1.0)),
                    &record_to_tensor(&pair.lr, (0.0, 1.0)),
                    &record_to_tensor(&pair.hr, (0.0, 1.0)),
                    true,
                    0,
                )
                .unwrap();
            backward(&losses.total).unwrap();
            model
                .encoder
                .iter()
                .map(|l| l.weight.grad().unwrap())
                .collect::<Vec<_>>()
        };
        let lr_only = grads_for(LossMode::Lr);
        let hr_only = grads_for(LossMode::Hr);
        let both = grads_for(LossMode::LrPlusHr);
        for ((a, b), c) in lr_only.iter().zip(&hr_only).zip(&both) {
            for ((x, y), z) in a.iter().zip(b).zip(c) {
                assert!((x + y - z).abs() < 1e-10, "{x} + {y} != {z}");
            }
        }
    }

    #[test]
    fn train_epochs_zero_is_vacuous() {
        let mut config = tiny_config();
        config.epochs = 0;
        let model = DcaeSrModel::build(config).unwrap();
        let before: Vec<Vec<f64>> = model.parameters().iter().map(|p| p.to_vec()).collect();
        let history = train(&model, &[tiny_pair(1)], None, None, |_| {}).unwrap();
        assert!(history.epochs.is_empty());
        let after: Vec<Vec<f64>> = model.parameters().iter().map(|p| p.to_vec()).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn train_requires_data() {
        let model = DcaeSrModel::build(tiny_config()).unwrap();
        assert!(matches!(train(&model, &[], None, None, |_| {}), Err(ModelError::EmptyDataset)));
    }

    #[test]
    fn training_is_bit_deterministic() {
        let run = || {
            let mut config = tiny_config();
            config.epochs = 3;
            let model = DcaeSrModel::build(config).unwrap();
            let pairs = vec![tiny_pair(1), tiny_pair(2), tiny_pair(3)];
            train(&model, &pairs, None, None, |_| {}).unwrap();
            write_checkpoint(&model.checkpoint_entries())
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn checkpoint_round_trip_restores_exact_parameters() {
        let model = DcaeSrModel::build(tiny_config()).unwrap();
        let bytes = write_checkpoint(&model.checkpoint_entries());
        let other = DcaeSrModel::build(DcaeSrConfig { seed: 99, ..tiny_config() }).unwrap();
        other.load_checkpoint_bytes(&bytes).unwrap();
        assert_eq!(bytes, write_checkpoint(&other.checkpoint_entries()));
        // wrong-width model rejects it
        let mut bad_config = tiny_config();
        bad_config.width_multiplier = Ratio { num: 1, den: 96 };
        let bad = DcaeSrModel::build(bad_config).unwrap();
        assert!(matches!(
            bad.load_checkpoint_bytes(&bytes),
            Err(ModelError::CheckpointMismatch { .. })
        ));
    }

    #[test]
    fn repeated_steps_reduce_sr_loss() {
        let mut config = tiny_config();
        config.lr = 1e-3;
        config.dropout_rate = 0.0;
        let model = DcaeSrModel::build(config).unwrap();
        let pair = tiny_pair(4);
        let mut adam = AdamState::new(&model.parameters());
        let mut first = None;
        let mut last = None;
        for step in 0..60 {
            let (_, sr) = model
                .train_step(&mut adam, &pair.lr, pair.lr_target(), &pair.hr, step)
                .unwrap();
            if step == 0 {
                first = sr;
            }
            last = sr;
        }
        assert!(last.unwrap() < first.unwrap(), "{last:?} !< {first:?}");
    }
}
