//! Sequence-to-sequence acoustic model.
//!
//! Phoneme ids are embedded and encoded by a convolution stack and a
//! bidirectional LSTM (no dropout). Each decoder step attends over the
//! encoder outputs with additive energies that combine the previous decoder
//! output, the encoder outputs and convolutional features of the previous
//! attention weights; the energy vector is weight-normalized (`v = g·u/‖u‖`).
//! The decoder emits a block of 5 mel frames and a stop value per step. The
//! last frame of the previous block feeds both the attention query and the
//! decoder input, and the speaker embedding is concatenated to the decoder
//! input at every step.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::container::Container;
use crate::error::{Error, Result};
use crate::melspec::{MelConfig, MelSpectrogram, N_MELS};
use crate::nn::layers::{BiLstm, Conv1d, Linear, Lstm};
use crate::nn::{Adam, AdamConfig, Gradients, Graph, ParamId, ParamStore, Tensor, Var};
use crate::textfront::{PhonemeSequence, SymbolInventory};

pub const BLOCK_SIZE: usize = 5;
pub const CHECKPOINT_KIND: &str = "acoustic";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcousticConfig {
    pub inventory_size: usize,
    pub embedding_dim: usize,
    pub encoder_conv_layers: usize,
    pub encoder_kernel: usize,
    /// Width of the encoder output (twice the BiLSTM hidden size).
    pub encoder_dim: usize,
    pub attention_dim: usize,
    pub location_filters: usize,
    pub location_kernel: usize,
    pub prenet_dim: usize,
    pub decoder_dim: usize,
    pub n_mels: usize,
    pub block_size: usize,
    pub speaker_count: usize,
    pub speaker_embedding_dim: usize,
    pub dropout_p: f64,
    pub teacher_forcing_p: f64,
    pub stop_threshold: f64,
    pub stop_pos_weight: f64,
    pub max_decoder_blocks: usize,
    /// Keep decoder and auto-regression dropout active when synthesizing.
    pub inference_dropout: bool,
    pub optimizer: AdamConfig,
}

impl AcousticConfig {
    /// Small dimensions for tests and desk-scale experiments.
    pub fn toy(inventory_size: usize, speaker_count: usize) -> Self {
        Self {
            inventory_size,
            embedding_dim: 16,
            encoder_conv_layers: 2,
            encoder_kernel: 5,
            encoder_dim: 32,
            attention_dim: 24,
            location_filters: 4,
            location_kernel: 5,
            prenet_dim: 24,
            decoder_dim: 48,
            n_mels: N_MELS,
            block_size: BLOCK_SIZE,
            speaker_count,
            speaker_embedding_dim: 8,
            dropout_p: 0.1,
            teacher_forcing_p: 0.9,
            stop_threshold: 0.5,
            stop_pos_weight: 5.0,
            max_decoder_blocks: 200,
            inference_dropout: true,
            optimizer: AdamConfig {
                learning_rate: 2e-3,
                ..AdamConfig::default()
            },
        }
    }

    /// Tacotron-2-sized layers.
    pub fn reference(inventory_size: usize, speaker_count: usize) -> Self {
        Self {
            embedding_dim: 512,
            encoder_conv_layers: 3,
            encoder_dim: 512,
            attention_dim: 128,
            location_filters: 32,
            location_kernel: 31,
            prenet_dim: 256,
            decoder_dim: 1024,
            speaker_embedding_dim: 64,
            max_decoder_blocks: 400,
            optimizer: AdamConfig::default(),
            ..Self::toy(inventory_size, speaker_count)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.block_size != BLOCK_SIZE {
            return fail(format!("block_size must be {BLOCK_SIZE}"));
        }
        if self.n_mels != N_MELS {
            return fail(format!("n_mels must be {N_MELS}"));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return fail(format!("dropout_p {} not in [0, 1)", self.dropout_p));
        }
        if !(0.0..=1.0).contains(&self.teacher_forcing_p) {
            return fail(format!("teacher_forcing_p {} not in [0, 1]", self.teacher_forcing_p));
        }
        if !self.encoder_dim.is_multiple_of(2) {
            return fail("encoder_dim must be even".into());
        }
        if self.encoder_kernel.is_multiple_of(2) || self.location_kernel.is_multiple_of(2) {
            return fail("convolution kernels must be odd".into());
        }
        if self.inventory_size == 0 || self.speaker_count == 0 || self.max_decoder_blocks == 0 {
            return fail("inventory, speaker count and max_decoder_blocks must be positive".into());
        }
        Ok(())
    }

    pub fn block_width(&self) -> usize {
        self.block_size * self.n_mels
    }
}

/// Per-band affine normalization applied to targets outside the graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MelNormalization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl MelNormalization {
    pub fn identity() -> Self {
        Self {
            mean: vec![0.0; N_MELS],
            std: vec![1.0; N_MELS],
        }
    }

    pub fn fit<'a>(mels: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let mut sum = vec![0.0; N_MELS];
        let mut sq = vec![0.0; N_MELS];
        let mut n = 0usize;
        for m in mels {
            for r in 0..m.rows() {
                for (c, &v) in m.row(r).iter().enumerate() {
                    sum[c] += v;
                    sq[c] += v * v;
                }
                n += 1;
            }
        }
        if n == 0 {
            return Self::identity();
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(s, m)| (s / n as f64 - m * m).max(0.0).sqrt().max(1e-3))
            .collect();
        Self { mean, std }
    }

    pub fn apply(&self, frames: &Tensor) -> Tensor {
        let mut out = frames.clone();
        for r in 0..out.rows() {
            for (c, v) in out.row_mut(r).iter_mut().enumerate() {
                *v = (*v - self.mean[c]) / self.std[c];
            }
        }
        out
    }

    pub fn invert(&self, frames: &Tensor) -> Tensor {
        let mut out = frames.clone();
        for r in 0..out.rows() {
            for (c, v) in out.row_mut(r).iter_mut().enumerate() {
                *v = *v * self.std[c] + self.mean[c];
            }
        }
        out
    }
}

/// Speaker id → row of the learned embedding table (one-hot lookup).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpeakerTable {
    ids: Vec<String>,
}

impl SpeakerTable {
    pub fn new(mut ids: Vec<String>) -> Self {
        ids.sort();
        ids.dedup();
        Self { ids }
    }

    pub fn index(&self, speaker_id: &str) -> Result<usize> {
        self.ids
            .binary_search_by(|s| s.as_str().cmp(speaker_id))
            .map_err(|_| Error::UnknownSpeaker(speaker_id.into()))
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Attention weights of the previous decoder step (`1×Tenc`).
#[derive(Debug, Clone, Copy)]
pub struct AttentionState {
    pub weights: Var,
}

/// Decoder LSTM state; must be created by [`AcousticModel::init_decoder_state`].
#[derive(Debug, Clone, Copy, Default)]
pub struct DecoderState {
    cell: Option<(Var, Var)>,
}

impl DecoderState {
    pub fn new(hidden: Var, cell: Var) -> Self {
        Self {
            cell: Some((hidden, cell)),
        }
    }

    pub fn uninitialized() -> Self {
        Self { cell: None }
    }

    pub fn hidden(&self) -> Result<Var> {
        self.cell.map(|(h, _)| h).ok_or(Error::UninitializedState)
    }
}

/// Output of one decoder step.
#[derive(Debug, Clone, Copy)]
pub struct BlockOutput {
    /// `1 × (5·80)` normalized mel block.
    pub block: Var,
    pub stop_logit: Var,
    pub state: DecoderState,
}

/// Dropout masks for one decoder step; `None` disables that site.
#[derive(Debug, Clone, Default)]
pub struct StepDropout {
    pub frame: Option<Tensor>,
    pub decoder: Option<Tensor>,
}

impl StepDropout {
    pub fn sample<R: Rng + ?Sized>(p: f64, frame_dim: usize, decoder_dim: usize, rng: &mut R) -> Self {
        if p <= 0.0 {
            return Self::default();
        }
        Self {
            frame: Some(dropout_mask(p, frame_dim, rng)),
            decoder: Some(dropout_mask(p, decoder_dim, rng)),
        }
    }
}

pub fn dropout_mask<R: Rng + ?Sized>(p: f64, len: usize, rng: &mut R) -> Tensor {
    let keep = 1.0 / (1.0 - p);
    Tensor::row_vector(
        (0..len)
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect(),
    )
}

/// Bernoulli choice between the ground-truth and the self-generated frame.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplingStats {
    pub decisions: u64,
    pub teacher_forced: u64,
}

impl SamplingStats {
    pub fn rate(&self) -> f64 {
        if self.decisions == 0 {
            0.0
        } else {
            self.teacher_forced as f64 / self.decisions as f64
        }
    }

    pub fn merge(&mut self, other: &SamplingStats) {
        self.decisions += other.decisions;
        self.teacher_forced += other.teacher_forced;
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduledSampler {
    pub teacher_forcing_p: f64,
}

impl ScheduledSampler {
    /// `true` selects the ground-truth frame.
    pub fn decide<R: Rng + ?Sized>(&self, rng: &mut R, stats: &mut SamplingStats) -> bool {
        let teacher = rng.random::<f64>() < self.teacher_forcing_p;
        stats.decisions += 1;
        if teacher {
            stats.teacher_forced += 1;
        }
        teacher
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub sequence: PhonemeSequence,
    /// `T × 80` log-mel target (unnormalized).
    pub mel: Tensor,
    pub speaker_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainStepReport {
    pub loss: f64,
    pub mel_loss: f64,
    pub stop_loss: f64,
    pub sampling: SamplingStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisRecord {
    pub utterance_id: String,
    pub speaker_id: String,
    pub mel: MelSpectrogram,
    /// One row per decoder block, one column per encoder position.
    pub attention: Tensor,
    pub stop_trajectory: Vec<f64>,
    pub terminated: bool,
    pub rng_seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RecordMeta {
    utterance_id: String,
    speaker_id: String,
    stop_trajectory: Vec<f64>,
    terminated: bool,
    rng_seed: u64,
    mel_config: MelConfig,
}

impl SynthesisRecord {
    pub const KIND: &'static str = "synthesis";

    pub fn blocks(&self) -> usize {
        self.attention.rows()
    }

    pub fn to_container(&self) -> Result<Container> {
        let meta = RecordMeta {
            utterance_id: self.utterance_id.clone(),
            speaker_id: self.speaker_id.clone(),
            stop_trajectory: self.stop_trajectory.clone(),
            terminated: self.terminated,
            rng_seed: self.rng_seed,
            mel_config: self.mel.config,
        };
        let mut c = Container::new(Self::KIND, &meta)?;
        c.push("mel", self.mel.frames.clone());
        c.push("attention", self.attention.clone());
        Ok(c)
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let meta: RecordMeta = c.metadata_as()?;
        let get = |n: &str| {
            c.tensor(n)
                .cloned()
                .ok_or_else(|| Error::Shape(format!("synthesis record lacks {n}")))
        };
        Ok(Self {
            utterance_id: meta.utterance_id,
            speaker_id: meta.speaker_id,
            mel: MelSpectrogram::new(get("mel")?, meta.mel_config)?,
            attention: get("attention")?,
            stop_trajectory: meta.stop_trajectory,
            terminated: meta.terminated,
            rng_seed: meta.rng_seed,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container()?.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&Container::load_kind(path, Self::KIND)?)
    }
}

#[derive(Debug, Clone, Copy)]
struct Attention {
    query: Linear,
    keys: ParamId,
    location_conv: ParamId,
    location_proj: ParamId,
    energy_direction: ParamId,
    energy_gain: ParamId,
}

#[derive(Debug, Clone)]
struct Layers {
    embedding: ParamId,
    encoder_convs: Vec<Conv1d>,
    encoder_rnn: BiLstm,
    speakers: ParamId,
    prenet: Linear,
    attention: Attention,
    decoder_rnn: Lstm,
    mel_out: Linear,
    stop_out: Linear,
}

/// Parameters, speaker table and normalization of one acoustic model.
#[derive(Debug, Clone)]
pub struct AcousticModel {
    config: AcousticConfig,
    params: ParamStore,
    layers: Layers,
    speakers: SpeakerTable,
    normalization: MelNormalization,
    inventory_fingerprint: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CheckpointMeta {
    config: AcousticConfig,
    inventory_fingerprint: String,
    speakers: SpeakerTable,
    normalization: MelNormalization,
}

/// Total, mel and stop losses, sampling counts and gradients for one example.
type ExampleGradients = (f64, f64, f64, SamplingStats, Gradients);

impl AcousticModel {
    pub fn new(config: AcousticConfig, speakers: SpeakerTable, inventory: &SymbolInventory, seed: u64) -> Result<Self> {
        config.validate()?;
        if config.inventory_size != inventory.len() {
            return Err(Error::Config(format!(
                "config inventory_size {} but inventory has {} symbols",
                config.inventory_size,
                inventory.len()
            )));
        }
        if speakers.len() != config.speaker_count {
            return Err(Error::Config(format!(
                "config speaker_count {} but {} speakers given",
                config.speaker_count,
                speakers.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let layers = build_layers(&config, &mut params, &mut rng);
        Ok(Self {
            config,
            params,
            layers,
            speakers,
            normalization: MelNormalization::identity(),
            inventory_fingerprint: inventory.fingerprint(),
        })
    }

    pub fn config(&self) -> &AcousticConfig {
        &self.config
    }

    pub fn config_mut(&mut self) -> &mut AcousticConfig {
        &mut self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn speakers(&self) -> &SpeakerTable {
        &self.speakers
    }

    pub fn normalization(&self) -> &MelNormalization {
        &self.normalization
    }

    pub fn set_normalization(&mut self, n: MelNormalization) {
        self.normalization = n;
    }

    pub fn inventory_fingerprint(&self) -> &str {
        &self.inventory_fingerprint
    }

    /// Embedding vector of a speaker (the same row is used at every step).
    pub fn speaker_embed(&self, speaker_id: &str) -> Result<Vec<f64>> {
        let idx = self.speakers.index(speaker_id)?;
        Ok(self.params.get(self.layers.speakers).row(idx).to_vec())
    }

    pub fn speaker_var(&self, g: &mut Graph, speaker_id: &str) -> Result<Var> {
        let idx = self.speakers.index(speaker_id)?;
        let table = g.param(self.layers.speakers);
        Ok(g.gather_rows(table, &[idx]))
    }

    /// `Tenc × encoder_dim` encoder outputs. No dropout is applied here.
    pub fn encode_sequence(&self, g: &mut Graph, seq: &PhonemeSequence) -> Result<Var> {
        if seq.is_empty() {
            return Err(Error::EmptySequence);
        }
        if let Some(&bad) = seq.symbol_ids.iter().find(|&&id| id >= self.config.inventory_size) {
            return Err(Error::SymbolIdOutOfRange {
                id: bad,
                size: self.config.inventory_size,
            });
        }
        let table = g.param(self.layers.embedding);
        let mut x = g.gather_rows(table, &seq.symbol_ids);
        for conv in &self.layers.encoder_convs {
            let y = conv.forward(g, x);
            x = g.relu(y);
        }
        Ok(self.layers.encoder_rnn.run(g, x))
    }

    /// Projects encoder outputs into attention key space (`Tenc × attention_dim`).
    pub fn attention_keys(&self, g: &mut Graph, memory: Var) -> Var {
        let k = g.param(self.layers.attention.keys);
        g.matmul(memory, k)
    }

    /// Initial attention: all weight on the first encoder position.
    pub fn initial_attention(&self, g: &mut Graph, encoder_len: usize) -> AttentionState {
        let mut w = Tensor::zeros(1, encoder_len);
        w.set(0, 0, 1.0);
        AttentionState { weights: g.input(w) }
    }

    /// Additive attention with location features and a weight-normalized
    /// energy vector. Returns new weights (`1×Tenc`) and context (`1×encoder_dim`).
    pub fn attend(
        &self,
        g: &mut Graph,
        query: Var,
        previous: AttentionState,
        memory: Var,
        keys: Var,
    ) -> Result<(AttentionState, Var)> {
        let a = &self.layers.attention;
        let (tenc, enc_dim) = g.value(memory).shape();
        let qdim = g.value(query).cols();
        if qdim != a.query.input
            || g.value(previous.weights).shape() != (1, tenc)
            || g.value(keys).shape() != (tenc, self.config.attention_dim)
            || enc_dim != self.config.encoder_dim
        {
            return Err(Error::Shape(format!(
                "attend: query 1x{qdim}, previous {:?}, keys {:?}, memory {tenc}x{enc_dim}",
                g.value(previous.weights).shape(),
                g.value(keys).shape()
            )));
        }
        let q = a.query.forward(g, query);
        let prev_col = g.transpose(previous.weights);
        let stacked = g.shift_stack(prev_col, self.config.location_kernel, self.config.location_kernel / 2);
        let conv = g.param(a.location_conv);
        let loc = g.matmul(stacked, conv);
        let proj = g.param(a.location_proj);
        let loc = g.matmul(loc, proj);
        let pre = g.add(keys, loc);
        let pre = g.add_row(pre, q);
        let act = g.tanh(pre);
        let u = g.param(a.energy_direction);
        let gain = g.param(a.energy_gain);
        let dir = g.normalize(u);
        let v = g.scale_by(dir, gain);
        let energies = g.matmul(act, v);
        let energies = g.transpose(energies);
        let weights = g.softmax_rows(energies);
        let context = g.matmul(weights, memory);
        Ok((AttentionState { weights }, context))
    }

    pub fn init_decoder_state(&self, g: &mut Graph) -> DecoderState {
        let h = g.input(Tensor::zeros(1, self.config.decoder_dim));
        let c = g.input(Tensor::zeros(1, self.config.decoder_dim));
        DecoderState { cell: Some((h, c)) }
    }

    /// Prenet over the recursive frame input, with auto-regression dropout.
    pub fn prenet(&self, g: &mut Graph, last_frame: Var, mask: Option<&Tensor>) -> Var {
        let x = match mask {
            Some(m) => {
                let m = g.input(m.clone());
                g.mul(last_frame, m)
            }
            None => last_frame,
        };
        let y = self.layers.prenet.forward(g, x);
        g.relu(y)
    }

    /// Decoder cell update and block projection.
    pub fn decode_block(
        &self,
        g: &mut Graph,
        context: Var,
        frame_features: Var,
        speaker_embedding: Var,
        state: DecoderState,
        decoder_mask: Option<&Tensor>,
    ) -> Result<BlockOutput> {
        let (h, c) = state.cell.ok_or(Error::UninitializedState)?;
        let input = g.concat_cols(&[context, frame_features, speaker_embedding]);
        if g.value(input).cols() != self.layers.decoder_rnn.input {
            return Err(Error::Shape(format!(
                "decoder input width {} != {}",
                g.value(input).cols(),
                self.layers.decoder_rnn.input
            )));
        }
        let proj = self.layers.decoder_rnn.project_inputs(g, input);
        let (h, c) = self.layers.decoder_rnn.step(g, proj, h, c);
        let out = match decoder_mask {
            Some(m) => {
                let m = g.input(m.clone());
                g.mul(h, m)
            }
            None => h,
        };
        let features = g.concat_cols(&[out, context]);
        let block = self.layers.mel_out.forward(g, features);
        let stop_logit = self.layers.stop_out.forward(g, features);
        Ok(BlockOutput {
            block,
            stop_logit,
            state: DecoderState { cell: Some((h, c)) },
        })
    }

    /// One full decoder step: prenet, attention, decoder block.
    #[allow(clippy::too_many_arguments)]
    fn step(
        &self,
        g: &mut Graph,
        last_frame: Var,
        attention: AttentionState,
        state: DecoderState,
        memory: Var,
        keys: Var,
        speaker: Var,
        dropout: &StepDropout,
    ) -> Result<(AttentionState, BlockOutput)> {
        let p = self.prenet(g, last_frame, dropout.frame.as_ref());
        let h_prev = state.hidden()?;
        let query = g.concat_cols(&[h_prev, p]);
        let (att, context) = self.attend(g, query, attention, memory, keys)?;
        let out = self.decode_block(g, context, p, speaker, state, dropout.decoder.as_ref())?;
        Ok((att, out))
    }

    /// Pads with the last frame to a multiple of the block size.
    pub fn pad_to_blocks(frames: &Tensor) -> Tensor {
        let t = frames.rows();
        let padded = t.div_ceil(BLOCK_SIZE).max(1) * BLOCK_SIZE;
        let mut out = Tensor::zeros(padded, frames.cols());
        for r in 0..padded {
            let src = r.min(t.saturating_sub(1));
            if t > 0 {
                out.row_mut(r).copy_from_slice(frames.row(src));
            }
        }
        out
    }

    /// Stop targets: zero everywhere except the final block.
    pub fn stop_targets(blocks: usize) -> Vec<f64> {
        (0..blocks).map(|b| if b + 1 == blocks { 1.0 } else { 0.0 }).collect()
    }

    /// Builds the training loss for one utterance with scheduled sampling.
    pub fn training_loss(
        &self,
        g: &mut Graph,
        example: &TrainingExample,
        rng: &mut ChaCha8Rng,
        stats: &mut SamplingStats,
    ) -> Result<(Var, Var, Var)> {
        let target = Self::pad_to_blocks(&self.normalization.apply(&example.mel));
        let blocks = target.rows() / BLOCK_SIZE;
        let width = self.config.block_width();
        let memory = self.encode_sequence(g, &example.sequence)?;
        let keys = self.attention_keys(g, memory);
        let speaker = self.speaker_var(g, &example.speaker_id)?;
        let mut attention = self.initial_attention(g, example.sequence.len());
        let mut state = self.init_decoder_state(g);
        let mut last_frame = g.input(Tensor::zeros(1, N_MELS));
        let sampler = ScheduledSampler {
            teacher_forcing_p: self.config.teacher_forcing_p,
        };
        let mut preds = Vec::with_capacity(blocks);
        let mut stops = Vec::with_capacity(blocks);
        for b in 0..blocks {
            let dropout = StepDropout::sample(self.config.dropout_p, N_MELS, self.config.decoder_dim, rng);
            let (att, out) = self.step(g, last_frame, attention, state, memory, keys, speaker, &dropout)?;
            attention = att;
            state = out.state;
            preds.push(out.block);
            stops.push(out.stop_logit);
            if b + 1 < blocks {
                last_frame = if sampler.decide(rng, stats) {
                    let row = (b + 1) * BLOCK_SIZE - 1;
                    g.input(Tensor::row_vector(target.row(row).to_vec()))
                } else {
                    let generated = g.slice_cols(out.block, width - N_MELS, N_MELS);
                    g.detach(generated)
                };
            }
        }
        let pred = g.concat_rows(&preds);
        let stop = g.concat_rows(&stops);
        let target_blocks = Tensor::from_vec(blocks, width, target.into_vec());
        let mel_loss = g.l1_loss(pred, target_blocks);
        let stop_loss = g.bce_with_logits(stop, &Self::stop_targets(blocks), self.config.stop_pos_weight);
        let loss = g.add(mel_loss, stop_loss);
        Ok((loss, mel_loss, stop_loss))
    }

    /// Loss and gradients for a batch, averaged over examples. Each example
    /// draws its own RNG stream from `rng`, so results do not depend on
    /// thread scheduling.
    pub fn compute_gradients(
        &self,
        batch: &[TrainingExample],
        rng: &mut ChaCha8Rng,
    ) -> Result<(TrainStepReport, Gradients)> {
        if batch.is_empty() {
            return Err(Error::Config("empty batch".into()));
        }
        let seeds: Vec<u64> = batch.iter().map(|_| rng.next_u64()).collect();
        let results: Vec<Result<ExampleGradients>> = batch
            .par_iter()
            .zip(seeds)
            .map(|(ex, seed)| {
                let mut local = ChaCha8Rng::seed_from_u64(seed);
                let mut stats = SamplingStats::default();
                let mut g = Graph::new(&self.params);
                let (loss, mel, stop) = self.training_loss(&mut g, ex, &mut local, &mut stats)?;
                let grads = g.backward(loss);
                Ok((g.scalar(loss), g.scalar(mel), g.scalar(stop), stats, grads))
            })
            .collect();
        let mut total = Gradients::new(&self.params);
        let mut report = TrainStepReport {
            loss: 0.0,
            mel_loss: 0.0,
            stop_loss: 0.0,
            sampling: SamplingStats::default(),
        };
        for r in results {
            let (loss, mel, stop, stats, grads) = r?;
            report.loss += loss;
            report.mel_loss += mel;
            report.stop_loss += stop;
            report.sampling.merge(&stats);
            total.merge(&grads);
        }
        let n = batch.len() as f64;
        report.loss /= n;
        report.mel_loss /= n;
        report.stop_loss /= n;
        total.scale(1.0 / n);
        if !report.loss.is_finite() || !total.all_finite() {
            return Err(Error::NonFiniteLoss {
                utterances: batch.iter().map(|e| e.sequence.utterance_id.clone()).collect(),
            });
        }
        Ok((report, total))
    }

    /// One optimizer update on `batch`.
    pub fn train_step(
        &mut self,
        optimizer: &mut Adam,
        batch: &[TrainingExample],
        rng: &mut ChaCha8Rng,
    ) -> Result<TrainStepReport> {
        let (report, grads) = self.compute_gradients(batch, rng)?;
        optimizer.apply(&mut self.params, &grads);
        Ok(report)
    }

    pub fn optimizer(&self) -> Adam {
        Adam::new(self.config.optimizer, &self.params)
    }

    /// Autoregressive synthesis until the stop value reaches the threshold or
    /// `max_decoder_blocks` is hit.
    pub fn synthesize(&self, seq: &PhonemeSequence, speaker_id: &str, seed: u64) -> Result<SynthesisRecord> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = &self.config;
        let width = cfg.block_width();
        let mut g = Graph::new(&self.params);
        let memory = self.encode_sequence(&mut g, seq)?;
        let keys = self.attention_keys(&mut g, memory);
        let speaker = self.speaker_var(&mut g, speaker_id)?;
        let mut attention = self.initial_attention(&mut g, seq.len());
        let mut state = self.init_decoder_state(&mut g);
        let mut last_frame = g.input(Tensor::zeros(1, N_MELS));
        let mut frames: Vec<f64> = Vec::new();
        let mut rows: Vec<f64> = Vec::new();
        let mut stops = Vec::new();
        let mut terminated = false;
        let p = if cfg.inference_dropout { cfg.dropout_p } else { 0.0 };
        for _ in 0..cfg.max_decoder_blocks {
            let dropout = StepDropout::sample(p, N_MELS, cfg.decoder_dim, &mut rng);
            let (att, out) = self.step(&mut g, last_frame, attention, state, memory, keys, speaker, &dropout)?;
            attention = att;
            state = out.state;
            rows.extend_from_slice(g.value(att.weights).data());
            frames.extend_from_slice(g.value(out.block).data());
            let stop = crate::nn::sigmoid(g.scalar(out.stop_logit));
            stops.push(stop);
            if stop >= cfg.stop_threshold {
                terminated = true;
                break;
            }
            let last = g.slice_cols(out.block, width - N_MELS, N_MELS);
            last_frame = g.detach(last);
        }
        let blocks = stops.len();
        let normalized = Tensor::from_vec(blocks * BLOCK_SIZE, N_MELS, frames);
        let mel = MelSpectrogram::new(self.normalization.invert(&normalized), MelConfig::default())?;
        Ok(SynthesisRecord {
            utterance_id: seq.utterance_id.clone(),
            speaker_id: speaker_id.into(),
            mel,
            attention: Tensor::from_vec(blocks, seq.len(), rows),
            stop_trajectory: stops,
            terminated,
            rng_seed: seed,
        })
    }

    pub fn to_container(&self) -> Result<Container> {
        let meta = CheckpointMeta {
            config: self.config.clone(),
            inventory_fingerprint: self.inventory_fingerprint.clone(),
            speakers: self.speakers.clone(),
            normalization: self.normalization.clone(),
        };
        let mut c = Container::new(CHECKPOINT_KIND, &meta)?;
        for (name, t) in self.params.iter() {
            c.push(name, t.clone());
        }
        Ok(c)
    }

    pub fn from_container(c: &Container, inventory: &SymbolInventory) -> Result<Self> {
        let meta: CheckpointMeta = c.metadata_as()?;
        if meta.inventory_fingerprint != inventory.fingerprint() {
            return Err(Error::Config(
                "checkpoint was trained with a different symbol inventory".into(),
            ));
        }
        let mut model = Self::new(meta.config, meta.speakers, inventory, 0)?;
        model.normalization = meta.normalization;
        load_params(&mut model.params, c)?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container()?.save(path)
    }

    pub fn load(path: &Path, inventory: &SymbolInventory) -> Result<Self> {
        Self::from_container(&Container::load_kind(path, CHECKPOINT_KIND)?, inventory)
    }
}

pub(crate) fn load_params(store: &mut ParamStore, c: &Container) -> Result<()> {
    let by_name: BTreeMap<&str, &Tensor> = c.tensors.iter().map(|(n, t)| (n.as_str(), t)).collect();
    let names: Vec<String> = store.iter().map(|(n, _)| n.to_string()).collect();
    for name in names {
        let t = by_name
            .get(name.as_str())
            .ok_or_else(|| Error::Shape(format!("checkpoint lacks parameter {name}")))?;
        store.set(&name, (*t).clone()).map_err(Error::Shape)?;
    }
    Ok(())
}

const ENERGY_GAIN_INIT: f64 = 3.0;
const LOCATION_ADVANCE_INIT: f64 = 3.0;
const LOCATION_STAY_INIT: f64 = 2.4;

/// Location filter 0 starts as an advance-by-one detector (previous weight
/// one position to the left) and filter 1 as a stay detector; both project
/// onto the energy direction so initial alignments move monotonically.
/// Remaining filters are random.
fn location_init(cfg: &AcousticConfig, direction: &Tensor, rng: &mut ChaCha8Rng) -> (Tensor, Tensor) {
    let left = cfg.location_kernel / 2;
    let mut conv = Tensor::randn(
        cfg.location_kernel,
        cfg.location_filters,
        1.0 / (cfg.location_kernel as f64).sqrt(),
        rng,
    );
    let mut proj = Tensor::randn(
        cfg.location_filters,
        cfg.attention_dim,
        1.0 / (cfg.location_filters as f64).sqrt(),
        rng,
    );
    let seeded = [
        (left.saturating_sub(1), LOCATION_ADVANCE_INIT),
        (left, LOCATION_STAY_INIT),
    ];
    for (f, &(tap, strength)) in seeded.iter().enumerate().take(cfg.location_filters) {
        for k in 0..cfg.location_kernel {
            conv.set(k, f, if k == tap { 1.0 } else { 0.0 });
        }
        for d in 0..cfg.attention_dim {
            proj.set(f, d, strength * direction.get(d, 0));
        }
    }
    (conv, proj)
}

fn build_layers(cfg: &AcousticConfig, params: &mut ParamStore, rng: &mut ChaCha8Rng) -> Layers {
    let embedding = params.add(
        "enc.embedding",
        Tensor::randn(cfg.inventory_size, cfg.embedding_dim, 0.3, rng),
    );
    let mut encoder_convs = Vec::new();
    let mut width = cfg.embedding_dim;
    for i in 0..cfg.encoder_conv_layers {
        encoder_convs.push(Conv1d::new(
            params,
            &format!("enc.conv{i}"),
            width,
            cfg.embedding_dim,
            cfg.encoder_kernel,
            rng,
        ));
        width = cfg.embedding_dim;
    }
    let encoder_rnn = BiLstm::new(params, "enc.rnn", width, cfg.encoder_dim / 2, rng);
    let speakers = params.add(
        "dec.speakers",
        Tensor::randn(cfg.speaker_count, cfg.speaker_embedding_dim, 0.3, rng),
    );
    let prenet = Linear::new(params, "dec.prenet", cfg.n_mels, cfg.prenet_dim, rng);
    let query_dim = cfg.decoder_dim + cfg.prenet_dim;
    let mut direction = Tensor::randn(cfg.attention_dim, 1, 1.0, rng);
    let n = direction.norm();
    direction.data_mut().iter_mut().for_each(|v| *v /= n);
    let (location_conv, location_proj) = location_init(cfg, &direction, rng);
    let attention = Attention {
        query: Linear::new(params, "att.query", query_dim, cfg.attention_dim, rng),
        keys: params.add_randn("att.keys", cfg.encoder_dim, cfg.attention_dim, 1.0, rng),
        location_conv: params.add("att.location_conv", location_conv),
        location_proj: params.add("att.location_proj", location_proj),
        energy_direction: params.add("att.energy_direction", direction),
        energy_gain: params.add("att.energy_gain", Tensor::filled(1, 1, ENERGY_GAIN_INIT)),
    };
    let decoder_rnn = Lstm::new(
        params,
        "dec.rnn",
        cfg.encoder_dim + cfg.prenet_dim + cfg.speaker_embedding_dim,
        cfg.decoder_dim,
        rng,
    );
    let mel_out = Linear::new(
        params,
        "dec.mel_out",
        cfg.decoder_dim + cfg.encoder_dim,
        cfg.block_width(),
        rng,
    );
    let stop_out = Linear::new(params, "dec.stop_out", cfg.decoder_dim + cfg.encoder_dim, 1, rng);
    Layers {
        embedding,
        encoder_convs,
        encoder_rnn,
        speakers,
        prenet,
        attention,
        decoder_rnn,
        mel_out,
        stop_out,
    }
}
