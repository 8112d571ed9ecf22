//! Autoregressive mu-law vocoder with a recurrent conditioning network.
//!
//! Mel frames pass through stacked bidirectional LSTMs and are linearly
//! upsampled to one vector per audio sample. A single GRU consumes the
//! embedding of the previous class together with the conditioning vector;
//! its output goes through affine, ReLU, affine and a softmax over the
//! mu-law classes.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::acoustic::load_params;
use crate::container::Container;
use crate::error::{Error, Result};
use crate::melspec::{AudioClip, MelSpectrogram, MuLawCodec, N_MELS, SAMPLE_RATE};
use crate::nn::layers::{BiLstm, Gru, Linear};
use crate::nn::{softmax_in_place, Adam, AdamConfig, Gradients, Graph, ParamId, ParamStore, Tensor, Var};

pub const HOP: usize = 300;
pub const CHECKPOINT_KIND: &str = "vocoder";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VocoderConfig {
    pub gru_hidden: usize,
    /// Width of the hidden affine layer between the GRU and the softmax.
    pub affine_dim: usize,
    pub classes: usize,
    pub cond_layers: usize,
    pub cond_hidden: usize,
    pub class_embedding_dim: usize,
    pub sample_rate: u32,
    pub hop: usize,
    /// Training window length in samples.
    pub train_window: usize,
    pub optimizer: AdamConfig,
}

impl VocoderConfig {
    pub fn reference() -> Self {
        Self {
            gru_hidden: 896,
            affine_dim: 1024,
            classes: 1024,
            cond_layers: 2,
            cond_hidden: 128,
            class_embedding_dim: 256,
            sample_rate: SAMPLE_RATE,
            hop: HOP,
            train_window: 960,
            optimizer: AdamConfig::default(),
        }
    }

    /// Reference layout with hidden sizes divided by `factor` (classes stay 1024).
    pub fn scaled(factor: usize) -> Self {
        let r = Self::reference();
        let f = factor.max(1);
        Self {
            gru_hidden: (r.gru_hidden / f).max(1),
            affine_dim: (r.affine_dim / f).max(1),
            cond_hidden: (r.cond_hidden / f).max(1),
            class_embedding_dim: (r.class_embedding_dim / f).max(1),
            train_window: (r.train_window / f * 4).max(HOP),
            ..r
        }
    }

    /// One-eighth scale.
    pub fn toy() -> Self {
        Self::scaled(8)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.gru_hidden,
            self.affine_dim,
            self.classes,
            self.cond_layers,
            self.cond_hidden,
            self.class_embedding_dim,
            self.train_window,
        ];
        if positive.contains(&0) {
            return Err(Error::Config("vocoder sizes must be positive".into()));
        }
        if self.hop != HOP || self.sample_rate != SAMPLE_RATE {
            return Err(Error::Config(format!(
                "vocoder expects {SAMPLE_RATE} Hz audio and hop {HOP}"
            )));
        }
        if !self.classes.is_power_of_two() || self.classes < 4 {
            return Err(Error::Config(format!(
                "class count {} must be a power of two",
                self.classes
            )));
        }
        Ok(())
    }

    pub fn codec(&self) -> MuLawCodec {
        MuLawCodec::new(self.classes.trailing_zeros())
    }

    pub fn initial_class(&self) -> usize {
        self.classes / 2
    }
}

/// Recurrent hidden vector and previously emitted class.
#[derive(Debug, Clone, PartialEq)]
pub struct VocoderState {
    pub hidden: Vec<f64>,
    pub prev_class: usize,
    /// Index of the next sample to be produced.
    pub position: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum SamplingMode {
    Argmax,
    Sample { temperature: f64 },
}

#[derive(Debug, Clone, Copy)]
struct Layers {
    cond: [Option<BiLstm>; 4],
    cond_count: usize,
    embedding: ParamId,
    gru: Gru,
    affine1: Linear,
    affine2: Linear,
}

#[derive(Debug, Clone)]
pub struct Vocoder {
    config: VocoderConfig,
    params: ParamStore,
    layers: Layers,
    codec: MuLawCodec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VocoderTrainReport {
    pub loss: f64,
    pub window_start: usize,
    pub window_len: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TeacherForcedScore {
    pub accuracy: f64,
    pub cross_entropy: f64,
    pub samples: usize,
}

impl Vocoder {
    pub fn new(config: VocoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        if config.cond_layers > 4 {
            return Err(Error::Config("at most 4 conditioning layers".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let mut cond = [None; 4];
        let mut width = N_MELS;
        for (i, slot) in cond.iter_mut().enumerate().take(config.cond_layers) {
            let layer = BiLstm::new(
                &mut params,
                &format!("cond.rnn{i}"),
                width,
                config.cond_hidden,
                &mut rng,
            );
            width = layer.output_dim();
            *slot = Some(layer);
        }
        let embedding = params.add(
            "ar.embedding",
            Tensor::randn(config.classes, config.class_embedding_dim, 0.3, &mut rng),
        );
        let gru = Gru::new(
            &mut params,
            "ar.gru",
            config.class_embedding_dim + width,
            config.gru_hidden,
            &mut rng,
        );
        let affine1 = Linear::new(
            &mut params,
            "ar.affine1",
            config.gru_hidden,
            config.affine_dim,
            &mut rng,
        );
        let affine2 = Linear::new(&mut params, "ar.affine2", config.affine_dim, config.classes, &mut rng);
        let codec = config.codec();
        Ok(Self {
            layers: Layers {
                cond,
                cond_count: config.cond_layers,
                embedding,
                gru,
                affine1,
                affine2,
            },
            config,
            params,
            codec,
        })
    }

    pub fn config(&self) -> &VocoderConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn codec(&self) -> &MuLawCodec {
        &self.codec
    }

    pub fn cond_dim(&self) -> usize {
        2 * self.config.cond_hidden
    }

    pub fn optimizer(&self) -> Adam {
        Adam::new(self.config.optimizer, &self.params)
    }

    fn check_mel(&self, mel: &Tensor) -> Result<()> {
        if mel.cols() != N_MELS {
            return Err(Error::InvalidMel(format!(
                "expected {N_MELS} mel bands, got {}",
                mel.cols()
            )));
        }
        if mel.rows() == 0 {
            return Err(Error::EmptySequence);
        }
        Ok(())
    }

    /// Frame-rate conditioning features (`T × cond_dim`).
    pub fn condition_frames(&self, g: &mut Graph, mel: Var) -> Result<Var> {
        self.check_mel(g.value(mel))?;
        let mut x = mel;
        for layer in self.layers.cond.iter().take(self.layers.cond_count).flatten() {
            x = layer.run(g, x);
        }
        Ok(x)
    }

    /// Per-sample conditioning (`300·T × cond_dim`).
    pub fn condition(&self, g: &mut Graph, mel: Var) -> Result<Var> {
        let frames = self.condition_frames(g, mel)?;
        Ok(g.upsample_rows(frames, self.config.hop))
    }

    /// Conditioning for a whole spectrogram as a plain tensor.
    pub fn condition_tensor(&self, mel: &MelSpectrogram) -> Result<Tensor> {
        let mut g = Graph::new(&self.params);
        let m = g.input(mel.frames.clone());
        let c = self.condition(&mut g, m)?;
        Ok(g.value(c).clone())
    }

    pub fn initial_state(&self) -> VocoderState {
        VocoderState {
            hidden: vec![0.0; self.config.gru_hidden],
            prev_class: self.config.initial_class(),
            position: 0,
        }
    }

    fn check_state(&self, state: &VocoderState) -> Result<()> {
        if state.hidden.len() != self.config.gru_hidden || state.prev_class >= self.config.classes {
            return Err(Error::Shape(format!(
                "vocoder state: hidden {} (want {}), class {} (want < {})",
                state.hidden.len(),
                self.config.gru_hidden,
                state.prev_class,
                self.config.classes
            )));
        }
        Ok(())
    }

    /// GRU inputs for a run of previous classes and conditioning rows.
    fn gru_inputs(&self, g: &mut Graph, prev_classes: &[usize], cond: Var) -> Var {
        let table = g.param(self.layers.embedding);
        let emb = g.gather_rows(table, prev_classes);
        let x = g.concat_cols(&[emb, cond]);
        self.layers.gru.project_inputs(g, x)
    }

    fn output_logits(&self, g: &mut Graph, hidden: Var) -> Var {
        let a = self.layers.affine1.forward(g, hidden);
        let a = g.relu(a);
        self.layers.affine2.forward(g, a)
    }

    /// Runs the GRU over `prev_classes` from `h0`; returns logits (`n × classes`)
    /// and the final hidden state.
    fn unroll(&self, g: &mut Graph, h0: Var, prev_classes: &[usize], cond: Var) -> (Var, Var) {
        let proj = self.gru_inputs(g, prev_classes, cond);
        let mut h = h0;
        let mut hs = Vec::with_capacity(prev_classes.len());
        for t in 0..prev_classes.len() {
            let x = g.slice_rows(proj, t, 1);
            h = self.layers.gru.step(g, x, h);
            hs.push(h);
        }
        let stacked = g.concat_rows(&hs);
        (self.output_logits(g, stacked), h)
    }

    /// Logits for one step and the next hidden vector.
    pub fn step_logits(&self, state: &VocoderState, cond: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_state(state)?;
        if cond.len() != self.cond_dim() {
            return Err(Error::Shape(format!(
                "conditioning width {} != {}",
                cond.len(),
                self.cond_dim()
            )));
        }
        let mut g = Graph::new(&self.params);
        let h0 = g.input(Tensor::row_vector(state.hidden.clone()));
        let c = g.input(Tensor::row_vector(cond.to_vec()));
        let (logits, h) = self.unroll(&mut g, h0, &[state.prev_class], c);
        let logits = g.value(logits).data().to_vec();
        if logits.iter().any(|v| !v.is_finite()) {
            let norm = state.hidden.iter().map(|v| v * v).sum::<f64>().sqrt();
            return Err(Error::NonFiniteLogits {
                sample: state.position,
                hidden_norm: norm,
                previous_class: state.prev_class,
            });
        }
        Ok((logits, g.value(h).data().to_vec()))
    }

    /// Class distribution for the next sample. The returned state carries
    /// the new hidden vector; its `prev_class` is updated by the caller once
    /// a class is chosen (see [`Vocoder::advance`]).
    pub fn sample_step(&self, state: &VocoderState, cond: &[f64]) -> Result<(Vec<f64>, VocoderState)> {
        let (mut dist, hidden) = self.step_logits(state, cond)?;
        softmax_in_place(&mut dist);
        Ok((
            dist,
            VocoderState {
                hidden,
                prev_class: state.prev_class,
                position: state.position,
            },
        ))
    }

    pub fn advance(state: &mut VocoderState, class: usize) {
        state.prev_class = class;
        state.position += 1;
    }

    /// Picks a class from logits.
    pub fn choose<R: Rng + ?Sized>(logits: &[f64], mode: SamplingMode, rng: &mut R) -> usize {
        match mode {
            SamplingMode::Argmax => argmax(logits),
            SamplingMode::Sample { temperature } => {
                if temperature <= 0.0 {
                    return argmax(logits);
                }
                let mut p: Vec<f64> = logits.iter().map(|l| l / temperature).collect();
                softmax_in_place(&mut p);
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (i, &pi) in p.iter().enumerate() {
                    acc += pi;
                    if u < acc {
                        return i;
                    }
                }
                argmax(&p)
            }
        }
    }

    /// Emits exactly `300 × T` samples.
    pub fn generate(&self, mel: &MelSpectrogram, seed: u64, mode: SamplingMode) -> Result<AudioClip> {
        let cond = self.condition_tensor(mel)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut state = self.initial_state();
        let mut out = Vec::with_capacity(cond.rows());
        for t in 0..cond.rows() {
            let (logits, hidden) = self.step_logits(&state, cond.row(t))?;
            let class = Self::choose(&logits, mode, &mut rng);
            state.hidden = hidden;
            Self::advance(&mut state, class);
            out.push(self.codec.decode(class)?);
        }
        AudioClip::new(out, self.config.sample_rate)
    }

    /// Trims `clip` to `300 × T`; any other length mismatch is an error.
    pub fn align(&self, clip: &AudioClip, mel: &MelSpectrogram) -> Result<Vec<usize>> {
        let frames = mel.num_frames();
        let expected = frames * self.config.hop;
        if clip.len() < expected || clip.len() >= expected + self.config.hop {
            return Err(Error::Misaligned {
                audio: clip.len(),
                frames,
                expected,
            });
        }
        Ok(clip.samples()[..expected]
            .iter()
            .map(|&x| self.codec.encode(x))
            .collect())
    }

    /// Teacher-forced cross-entropy over `[start, start + len)`.
    pub fn window_loss(&self, g: &mut Graph, classes: &[usize], mel: &Tensor, start: usize, len: usize) -> Result<Var> {
        self.check_mel(mel)?;
        let hop = self.config.hop;
        let total = mel.rows() * hop;
        if classes.len() != total || len == 0 || start + len > total {
            return Err(Error::Shape(format!(
                "window {start}+{len} over {} classes / {total} samples",
                classes.len()
            )));
        }
        const MARGIN: usize = 3;
        let f0 = (start / hop).saturating_sub(MARGIN);
        let f1 = ((start + len).div_ceil(hop) + MARGIN).min(mel.rows());
        let sub = Tensor::from_vec(f1 - f0, N_MELS, mel.data()[f0 * N_MELS..f1 * N_MELS].to_vec());
        let m = g.input(sub);
        let cond = self.condition(g, m)?;
        let cond = g.slice_rows(cond, start - f0 * hop, len);
        let prev: Vec<usize> = (start..start + len)
            .map(|i| {
                if i == 0 {
                    self.config.initial_class()
                } else {
                    classes[i - 1]
                }
            })
            .collect();
        let h0 = g.input(Tensor::zeros(1, self.config.gru_hidden));
        let (logits, _) = self.unroll(g, h0, &prev, cond);
        Ok(g.cross_entropy(logits, &classes[start..start + len]))
    }

    pub fn compute_gradients<R: Rng + ?Sized>(
        &self,
        classes: &[usize],
        mel: &MelSpectrogram,
        rng: &mut R,
    ) -> Result<(VocoderTrainReport, Gradients)> {
        let total = classes.len();
        let len = self.config.train_window.min(total);
        let start = if total > len {
            rng.random_range(0..=total - len)
        } else {
            0
        };
        let mut g = Graph::new(&self.params);
        let loss = self.window_loss(&mut g, classes, &mel.frames, start, len)?;
        let value = g.scalar(loss);
        let grads = g.backward(loss);
        if !value.is_finite() || !grads.all_finite() {
            return Err(Error::NonFiniteLoss {
                utterances: vec![format!("window {start}+{len}")],
            });
        }
        Ok((
            VocoderTrainReport {
                loss: value,
                window_start: start,
                window_len: len,
            },
            grads,
        ))
    }

    /// One update on a random window of an aligned clip.
    pub fn train_step<R: Rng + ?Sized>(
        &mut self,
        optimizer: &mut Adam,
        classes: &[usize],
        mel: &MelSpectrogram,
        rng: &mut R,
    ) -> Result<VocoderTrainReport> {
        let (report, grads) = self.compute_gradients(classes, mel, rng)?;
        optimizer.apply(&mut self.params, &grads);
        Ok(report)
    }

    /// Teacher-forced top-1 accuracy and cross-entropy over the whole clip,
    /// with the hidden state carried continuously from the initial state.
    pub fn teacher_forced_score(&self, classes: &[usize], mel: &MelSpectrogram) -> Result<TeacherForcedScore> {
        let cond = self.condition_tensor(mel)?;
        if cond.rows() != classes.len() {
            return Err(Error::Misaligned {
                audio: classes.len(),
                frames: mel.num_frames(),
                expected: cond.rows(),
            });
        }
        const CHUNK: usize = 1000;
        let mut hidden = Tensor::zeros(1, self.config.gru_hidden);
        let mut correct = 0usize;
        let mut ce = 0.0;
        let mut start = 0;
        while start < classes.len() {
            let len = CHUNK.min(classes.len() - start);
            let mut g = Graph::new(&self.params);
            let h0 = g.input(hidden.clone());
            let c = g.input(Tensor::from_vec(
                len,
                cond.cols(),
                cond.data()[start * cond.cols()..(start + len) * cond.cols()].to_vec(),
            ));
            let prev: Vec<usize> = (start..start + len)
                .map(|i| {
                    if i == 0 {
                        self.config.initial_class()
                    } else {
                        classes[i - 1]
                    }
                })
                .collect();
            let (logits, h) = self.unroll(&mut g, h0, &prev, c);
            let l = g.value(logits);
            for r in 0..len {
                let row = l.row(r);
                let target = classes[start + r];
                if argmax(row) == target {
                    correct += 1;
                }
                ce += crate::nn::log_sum_exp(row) - row[target];
            }
            hidden = g.value(h).clone();
            start += len;
        }
        let n = classes.len();
        Ok(TeacherForcedScore {
            accuracy: correct as f64 / n as f64,
            cross_entropy: ce / n as f64,
            samples: n,
        })
    }

    pub fn to_container(&self) -> Result<Container> {
        let mut c = Container::new(CHECKPOINT_KIND, &self.config)?;
        for (name, t) in self.params.iter() {
            c.push(name, t.clone());
        }
        Ok(c)
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let config: VocoderConfig = c.metadata_as()?;
        let mut v = Self::new(config, 0)?;
        load_params(&mut v.params, c)?;
        Ok(v)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container()?.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&Container::load_kind(path, CHECKPOINT_KIND)?)
    }
}

/// Index of the largest value; ties go to the smaller index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::melspec::MelConfig;

    fn tiny() -> VocoderConfig {
        VocoderConfig {
            gru_hidden: 12,
            affine_dim: 16,
            cond_hidden: 4,
            class_embedding_dim: 6,
            train_window: 200,
            ..VocoderConfig::toy()
        }
    }

    fn mel(frames: usize, rng: &mut ChaCha8Rng) -> MelSpectrogram {
        MelSpectrogram::new(Tensor::randn(frames, N_MELS, 1.0, rng), MelConfig::default()).unwrap()
    }

    #[test]
    fn toy_scale_is_one_eighth() {
        let t = VocoderConfig::toy();
        assert_eq!((t.gru_hidden, t.cond_hidden, t.classes), (112, 16, 1024));
        assert_eq!(VocoderConfig::reference().gru_hidden, 896);
    }

    #[test]
    fn conditioning_length() {
        let v = Vocoder::new(tiny(), 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let c = v.condition_tensor(&mel(10, &mut rng)).unwrap();
        assert_eq!(c.shape(), (3000, 8));
    }

    #[test]
    fn constant_mel_gives_constant_interior_conditioning() {
        let v = Vocoder::new(tiny(), 1).unwrap();
        let m = MelSpectrogram::new(Tensor::filled(400, N_MELS, -2.0), MelConfig::default()).unwrap();
        let c = v.condition_tensor(&m).unwrap();
        let mid = c.row(200 * HOP).to_vec();
        for r in [195 * HOP, 198 * HOP + 17, 203 * HOP + 150] {
            for (a, b) in c.row(r).iter().zip(&mid) {
                assert!((a - b).abs() < 1e-6, "{a} {b}");
            }
        }
    }

    #[test]
    fn step_distribution_and_argmax_determinism() {
        let v = Vocoder::new(tiny(), 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cond: Vec<f64> = (0..v.cond_dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let s = v.initial_state();
        let (d, _) = v.sample_step(&s, &cond).unwrap();
        assert_eq!(d.len(), 1024);
        assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(d.iter().all(|&p| p >= 0.0));
        let (l1, _) = v.step_logits(&s, &cond).unwrap();
        let (l2, _) = v.step_logits(&s, &cond).unwrap();
        assert_eq!(argmax(&l1), argmax(&l2));
        let bad = VocoderState {
            prev_class: 1024,
            ..v.initial_state()
        };
        assert!(v.step_logits(&bad, &cond).is_err());
    }

    #[test]
    fn generate_length_range_and_seed() {
        let v = Vocoder::new(tiny(), 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let m = mel(3, &mut rng);
        let mode = SamplingMode::Sample { temperature: 1.0 };
        let a = v.generate(&m, 9, mode).unwrap();
        assert_eq!(a.len(), 900);
        assert!(a.samples().iter().all(|x| (-1.0..=1.0).contains(x)));
        assert_eq!(a, v.generate(&m, 9, mode).unwrap());
        assert_ne!(a, v.generate(&m, 10, mode).unwrap());
    }

    #[test]
    fn misaligned_clip_is_rejected() {
        let v = Vocoder::new(tiny(), 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let m = mel(4, &mut rng);
        let short = AudioClip::new(vec![0.0; 1000], SAMPLE_RATE).unwrap();
        match v.align(&short, &m) {
            Err(Error::Misaligned { audio, expected, .. }) => assert_eq!((audio, expected), (1000, 1200)),
            other => panic!("{other:?}"),
        }
        let ok = AudioClip::new(vec![0.0; 1499], SAMPLE_RATE).unwrap();
        assert_eq!(v.align(&ok, &m).unwrap().len(), 1200);
        let long = AudioClip::new(vec![0.0; 1500], SAMPLE_RATE).unwrap();
        assert!(v.align(&long, &m).is_err());
    }

    #[test]
    fn untrained_loss_near_uniform() {
        let mut cfg = tiny();
        cfg.train_window = 300;
        let v = Vocoder::new(cfg, 7).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let m = mel(4, &mut rng);
        let classes: Vec<usize> = (0..1200).map(|_| rng.random_range(0..1024)).collect();
        let mut total = 0.0;
        for _ in 0..8 {
            total += v.compute_gradients(&classes, &m, &mut rng).unwrap().0.loss;
        }
        assert!((total / 8.0 - 1024f64.ln()).abs() < 0.1, "{}", total / 8.0);
    }

    #[test]
    fn teacher_forced_score_matches_window_loss() {
        let mut cfg = tiny();
        cfg.train_window = 1200;
        let v = Vocoder::new(cfg, 7).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let m = mel(4, &mut rng);
        let classes: Vec<usize> = (0..1200).map(|_| rng.random_range(0..1024)).collect();
        let score = v.teacher_forced_score(&classes, &m).unwrap();
        let mut g = Graph::new(v.params());
        let l = v.window_loss(&mut g, &classes, &m.frames, 0, 1200).unwrap();
        assert!((g.scalar(l) - score.cross_entropy).abs() < 1e-9);
    }

    #[test]
    fn checkpoint_round_trip() {
        let v = Vocoder::new(tiny(), 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.ckpt");
        v.save(&p).unwrap();
        let w = Vocoder::load(&p).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let m = mel(2, &mut rng);
        assert_eq!(
            v.generate(&m, 1, SamplingMode::Argmax).unwrap(),
            w.generate(&m, 1, SamplingMode::Argmax).unwrap()
        );
    }
}
