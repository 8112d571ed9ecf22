//! Synthetic corpora for desk-scale overfit experiments.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use std::f64::consts::PI;

use crate::acoustic::{AcousticConfig, AcousticModel, MelNormalization, SpeakerTable, TrainingExample, BLOCK_SIZE};
use crate::error::Result;
use crate::melspec::{extract_mel, AudioClip, MelConfig, N_MELS, SAMPLE_RATE};
use crate::nn::Tensor;
use crate::textfront::{PhonemeSequence, SymbolInventory};
use crate::vocoder::{TeacherForcedScore, Vocoder, VocoderConfig};

pub const TOY_SPEAKER: &str = "toy";

/// Training loss (normalized mel L1 plus stop BCE, 20-step mean) below which
/// the toy corpus counts as memorized.
pub const OVERFIT_LOSS_THRESHOLD: f64 = 0.05;

/// Teacher-forced top-1 accuracy the vocoder must exceed on its toy clip.
pub const VOCODER_ACCURACY_THRESHOLD: f64 = 0.9;

/// Five utterances over a small phone set. Each phone owns a fixed mel
/// template held for one or two blocks.
#[derive(Debug, Clone)]
pub struct AcousticToyCorpus {
    pub inventory: SymbolInventory,
    pub examples: Vec<TrainingExample>,
    /// Target length of each utterance in decoder blocks.
    pub target_blocks: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ToyCorpusShape {
    pub utterances: usize,
    pub min_phones: usize,
    pub max_phones: usize,
    pub max_blocks_per_phone: usize,
}

impl Default for ToyCorpusShape {
    fn default() -> Self {
        Self {
            utterances: 5,
            min_phones: 4,
            max_phones: 6,
            max_blocks_per_phone: 2,
        }
    }
}

pub fn acoustic_toy_corpus(seed: u64) -> AcousticToyCorpus {
    acoustic_toy_corpus_shaped(seed, ToyCorpusShape::default())
}

pub fn acoustic_toy_corpus_shaped(seed: u64, shape: ToyCorpusShape) -> AcousticToyCorpus {
    let inventory = SymbolInventory::arpabet();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phones = ["AA1", "IY1", "S", "M", "T", "UW1", "L", "K"];
    let ids: Vec<usize> = phones.iter().map(|p| inventory.id(p).expect("known phone")).collect();
    let templates: Vec<Vec<f64>> = ids
        .iter()
        .map(|_| (0..N_MELS).map(|_| rng.random_range(-6.0..0.0)).collect())
        .collect();
    let mut examples = Vec::new();
    let mut target_blocks = Vec::new();
    for u in 0..shape.utterances {
        let len = rng.random_range(shape.min_phones..=shape.max_phones);
        let mut order: Vec<usize> = (0..ids.len()).collect();
        order.shuffle(&mut rng);
        let chosen: Vec<usize> = order[..len.min(ids.len())].to_vec();
        let mut frames = Vec::new();
        let mut blocks = 0;
        for &p in &chosen {
            let dur = rng.random_range(1..=shape.max_blocks_per_phone);
            blocks += dur;
            for _ in 0..dur * BLOCK_SIZE {
                frames.extend_from_slice(&templates[p]);
            }
        }
        let mut symbol_ids: Vec<usize> = chosen.iter().map(|&p| ids[p]).collect();
        symbol_ids.push(inventory.term_id());
        examples.push(TrainingExample {
            sequence: PhonemeSequence {
                utterance_id: format!("toy{u}"),
                symbol_ids,
                source_text: chosen.iter().map(|&p| phones[p]).collect::<Vec<_>>().join(" "),
            },
            mel: Tensor::from_vec(blocks * BLOCK_SIZE, N_MELS, frames),
            speaker_id: TOY_SPEAKER.into(),
        });
        target_blocks.push(blocks);
    }
    AcousticToyCorpus {
        inventory,
        examples,
        target_blocks,
    }
}

#[derive(Debug, Clone)]
pub struct OverfitOutcome<M> {
    pub model: M,
    pub losses: Vec<f64>,
    /// First step at which the mean of the last 20 losses was below the threshold.
    pub reached_at: Option<usize>,
}

/// Trains on the full toy corpus for `max_steps` steps.
pub fn overfit_acoustic(
    corpus: &AcousticToyCorpus,
    config: AcousticConfig,
    max_steps: usize,
    threshold: f64,
    seed: u64,
) -> Result<OverfitOutcome<AcousticModel>> {
    let speakers = SpeakerTable::new(vec![TOY_SPEAKER.into()]);
    let mut model = AcousticModel::new(config, speakers, &corpus.inventory, seed)?;
    model.set_normalization(MelNormalization::fit(corpus.examples.iter().map(|e| &e.mel)));
    let mut opt = model.optimizer();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut losses = Vec::with_capacity(max_steps);
    let mut reached_at = None;
    for step in 0..max_steps {
        let report = model.train_step(&mut opt, &corpus.examples, &mut rng)?;
        losses.push(report.loss);
        let window = &losses[losses.len().saturating_sub(20)..];
        if reached_at.is_none() && window.len() == 20 && window.iter().sum::<f64>() / 20.0 < threshold {
            reached_at = Some(step + 1);
        }
    }
    Ok(OverfitOutcome {
        model,
        losses,
        reached_at,
    })
}

/// One second of a periodic harmonic signal (fundamental 100 Hz, so the
/// waveform repeats every 240 samples).
pub fn vocoder_toy_clip() -> AudioClip {
    let sr = SAMPLE_RATE as f64;
    let samples = (0..SAMPLE_RATE as usize)
        .map(|n| {
            let t = n as f64 / sr;
            [(1.0, 0.45), (2.0, 0.2), (3.0, 0.1), (5.0, 0.05)]
                .iter()
                .map(|(h, a)| a * (2.0 * PI * 100.0 * h * t).sin())
                .sum()
        })
        .collect();
    AudioClip::new(samples, SAMPLE_RATE).expect("amplitude below 1")
}

#[derive(Debug, Clone, PartialEq)]
pub struct VocoderEvaluation {
    pub step: usize,
    pub loss: f64,
    pub score: TeacherForcedScore,
}

/// Trains on random windows of `clip`, scoring teacher-forced accuracy on
/// the whole clip every `eval_every` steps; stops once accuracy exceeds
/// `target_accuracy` or after `max_steps`.
pub fn overfit_vocoder(
    clip: &AudioClip,
    config: VocoderConfig,
    max_steps: usize,
    eval_every: usize,
    target_accuracy: f64,
    seed: u64,
) -> Result<(Vocoder, Vec<VocoderEvaluation>)> {
    let mel = extract_mel(clip, &MelConfig::default())?;
    let mut vocoder = Vocoder::new(config, seed)?;
    let classes = vocoder.align(clip, &mel)?;
    let mut opt = vocoder.optimizer();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x70c0);
    let mut evals = Vec::new();
    let mut recent = Vec::new();
    for step in 1..=max_steps {
        recent.push(vocoder.train_step(&mut opt, &classes, &mel, &mut rng)?.loss);
        if step % eval_every == 0 || step == max_steps {
            let score = vocoder.teacher_forced_score(&classes, &mel)?;
            let loss = recent.iter().sum::<f64>() / recent.len() as f64;
            recent.clear();
            log::info!("vocoder step {step}: loss {loss:.4}, accuracy {:.4}", score.accuracy);
            evals.push(VocoderEvaluation { step, loss, score });
            if score.accuracy > target_accuracy {
                break;
            }
        }
    }
    Ok((vocoder, evals))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_corpus_shape_and_determinism() {
        let c = acoustic_toy_corpus(4);
        assert_eq!(c.examples.len(), 5);
        for (ex, &blocks) in c.examples.iter().zip(&c.target_blocks) {
            let ids = &ex.sequence.symbol_ids;
            assert_eq!(*ids.last().unwrap(), c.inventory.term_id());
            let phones = &ids[..ids.len() - 1];
            assert!((4..=6).contains(&phones.len()));
            let mut distinct = phones.to_vec();
            distinct.sort();
            distinct.dedup();
            assert_eq!(distinct.len(), phones.len());
            assert_eq!(ex.mel.rows(), blocks * BLOCK_SIZE);
            assert!((phones.len()..=2 * phones.len()).contains(&blocks));
        }
        let again = acoustic_toy_corpus(4);
        assert_eq!(again.target_blocks, c.target_blocks);
        assert_eq!(again.examples[0].mel, c.examples[0].mel);
    }

    #[test]
    fn vocoder_clip_repeats_every_240_samples() {
        let clip = vocoder_toy_clip();
        assert_eq!(clip.len(), SAMPLE_RATE as usize);
        let s = clip.samples();
        for n in (0..s.len() - 240).step_by(97) {
            assert!((s[n] - s[n + 240]).abs() < 1e-9);
        }
    }
}
