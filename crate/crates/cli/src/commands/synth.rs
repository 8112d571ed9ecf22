use std::path::{Path, PathBuf};

use anyhow::Context as _;
use polyvox_core::acoustic::{AcousticModel, SynthesisRecord};
use polyvox_core::audio::write_wav;
use polyvox_core::manifest::CorpusManifest;
use polyvox_core::vocoder::{SamplingMode, Vocoder};
use rayon::prelude::*;

use super::{usage, utterance_seed, Context};
use crate::commands::train::frontend;
use crate::error::CliResult;
use crate::fail;
use crate::layout::{check_file_stem, ExperimentDir};
use crate::runlog::Stage;
use crate::SynthArgs;

const CMD: &str = "synth";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentence {
    pub utterance_id: String,
    pub speaker_id: String,
    pub text: String,
}

/// `utt TAB speaker TAB text` lines; `#` comments and blank lines skipped.
pub fn read_sentences(path: &Path) -> CliResult<Vec<Sentence>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("read {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.splitn(3, '\t').collect();
        if f.len() != 3 {
            fail!(
                "{}:{}: expected utterance, speaker and text separated by tabs",
                path.display(),
                i + 1
            );
        }
        check_file_stem(f[0])?;
        out.push(Sentence {
            utterance_id: f[0].into(),
            speaker_id: f[1].into(),
            text: f[2].into(),
        });
    }
    Ok(out)
}

pub fn load_model(exp: &ExperimentDir) -> CliResult<(AcousticModel, polyvox_core::textfront::TextFrontend)> {
    if !exp.acoustic_ckpt().is_file() {
        fail!(
            "{} has no acoustic checkpoint; run train-acoustic first",
            exp.dir.display()
        );
    }
    let fe = frontend(&exp.lexicon())?;
    let model = AcousticModel::load(&exp.acoustic_ckpt(), &fe.inventory)?;
    Ok((model, fe))
}

/// Synthesizes each sentence into `<dir>/<utt>.rec` in parallel.
pub fn synthesize_all(
    model: &AcousticModel,
    fe: &polyvox_core::textfront::TextFrontend,
    sentences: &[Sentence],
    seed: u64,
    dir: &Path,
) -> CliResult<Vec<SynthesisRecord>> {
    std::fs::create_dir_all(dir)?;
    let records = sentences
        .par_iter()
        .map(|s| -> anyhow::Result<SynthesisRecord> {
            let seq = fe.process(&s.utterance_id, &s.text)?;
            let rec = model
                .synthesize(&seq, &s.speaker_id, utterance_seed(seed, &s.utterance_id))
                .with_context(|| format!("utterance {}", s.utterance_id))?;
            rec.save(&dir.join(format!("{}.rec", s.utterance_id)))?;
            Ok(rec)
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    Ok(records)
}

pub fn run(ctx: &Context, a: SynthArgs) -> CliResult<()> {
    let cfg = &ctx.config;
    let exp = ctx.experiment(CMD, a.exp)?;
    let text: Option<PathBuf> = cfg.opt(a.text, CMD, "text")?;
    let limit: Option<usize> = cfg.opt(a.limit, CMD, "limit")?;
    let wav = a.wav || cfg.get(CMD, "wav")?.unwrap_or(false);
    let temperature = cfg.pick(a.temperature, CMD, "temperature", 1.0f64)?;
    let seed = cfg.pick(a.seed, CMD, "seed", 0u64)?;
    if !(temperature >= 0.0 && temperature.is_finite()) {
        return Err(usage("--temperature must be a finite non-negative number"));
    }

    let source = text.clone().unwrap_or_else(|| exp.dev_manifest());
    let mut sentences = match &text {
        Some(p) => read_sentences(p)?,
        None => {
            if !source.is_file() {
                fail!("{} not found; give --text or run prepare-blend", source.display());
            }
            CorpusManifest::load(&source)?
                .records
                .into_iter()
                .map(|r| Sentence {
                    utterance_id: r.utterance_id,
                    speaker_id: r.speaker_id,
                    text: r.text,
                })
                .collect()
        }
    };
    if let Some(n) = limit {
        sentences.truncate(n);
    }
    for s in &sentences {
        check_file_stem(&s.utterance_id)?;
    }
    let mut inputs = vec![source, exp.acoustic_ckpt(), exp.lexicon()];
    if wav {
        inputs.push(exp.vocoder_ckpt());
    }
    let stage = Stage::new(CMD, exp.synth().join("synth.json"), &inputs)?
        .arg("limit", limit.map(|v| v.to_string()).unwrap_or_default())
        .arg("wav", wav)
        .arg("temperature", temperature)
        .seed("seed", seed);
    if ctx.skip(&stage)?.is_some() {
        return Ok(());
    }

    let (model, fe) = load_model(&exp)?;
    let records = synthesize_all(&model, &fe, &sentences, seed, &exp.synth())?;
    let mut outputs: Vec<PathBuf> = sentences
        .iter()
        .map(|s| exp.synth().join(format!("{}.rec", s.utterance_id)))
        .collect();
    if wav {
        if !exp.vocoder_ckpt().is_file() {
            fail!(
                "{} has no vocoder checkpoint; run train-vocoder first",
                exp.dir.display()
            );
        }
        let voc = Vocoder::load(&exp.vocoder_ckpt())?;
        let mode = if temperature == 0.0 {
            SamplingMode::Argmax
        } else {
            SamplingMode::Sample { temperature }
        };
        let wavs: Vec<PathBuf> = records
            .par_iter()
            .map(|r| -> anyhow::Result<PathBuf> {
                let clip = voc.generate(&r.mel, r.rng_seed, mode)?;
                let path = exp.synth().join(format!("{}.wav", r.utterance_id));
                write_wav(&path, &clip)?;
                Ok(path)
            })
            .collect::<anyhow::Result<_>>()?;
        outputs.extend(wavs);
    }
    let mut index = String::from("utterance_id\tspeaker_id\tblocks\tterminated\n");
    for r in &records {
        index.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            r.utterance_id,
            r.speaker_id,
            r.blocks(),
            r.terminated
        ));
    }
    let index_path = exp.synth().join("index.tsv");
    std::fs::write(&index_path, index)?;
    outputs.push(index_path);
    stage.finish(&outputs)?;
    let stopped = records.iter().filter(|r| r.terminated).count();
    println!(
        "synthesized {} utterances ({} stopped before the block limit) into {}",
        records.len(),
        stopped,
        exp.synth().display()
    );
    Ok(())
}
