use std::fmt::Write as _;
use std::path::PathBuf;

use anyhow::Context as _;
use polyvox_core::acoustic::{AcousticConfig, AcousticModel, MelNormalization, SpeakerTable, TrainingExample};
use polyvox_core::audio::load_audio;
use polyvox_core::manifest::{CorpusManifest, ManifestRecord};
use polyvox_core::melspec::{MelSpectrogram, SAMPLE_RATE};
use polyvox_core::textfront::{Lexicon, SymbolInventory, TextFrontend};
use polyvox_core::vocoder::{Vocoder, VocoderConfig};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{usage, Context};
use crate::error::CliResult;
use crate::fail;
use crate::layout::{check_file_stem, ExperimentDir};
use crate::runlog::Stage;
use crate::{TrainAcousticArgs, TrainVocoderArgs};

pub fn frontend(lexicon: &std::path::Path) -> CliResult<TextFrontend> {
    let lex = Lexicon::load(lexicon).with_context(|| format!("lexicon {}", lexicon.display()))?;
    Ok(TextFrontend::new(SymbolInventory::arpabet(), lex)?)
}

fn load_split(path: &std::path::Path) -> CliResult<Vec<ManifestRecord>> {
    if !path.is_file() {
        return Ok(Vec::new());
    }
    let records = CorpusManifest::load(path)?.records;
    for r in &records {
        check_file_stem(&r.utterance_id)?;
    }
    Ok(records)
}

fn require_features(exp: &ExperimentDir) -> CliResult<()> {
    if !exp.feature_index().is_file() {
        fail!("{} has no features; run extract-features first", exp.dir.display());
    }
    Ok(())
}

fn examples(exp: &ExperimentDir, fe: &TextFrontend, records: &[ManifestRecord]) -> CliResult<Vec<TrainingExample>> {
    records
        .iter()
        .map(|r| {
            let sequence = fe.process(&r.utterance_id, &r.text)?;
            let mel = MelSpectrogram::load(&exp.mel_path(&r.utterance_id))
                .with_context(|| format!("features of {}", r.utterance_id))?;
            Ok(TrainingExample {
                sequence,
                mel: mel.frames,
                speaker_id: r.speaker_id.clone(),
            })
        })
        .collect()
}

fn mel_inputs(exp: &ExperimentDir, records: &[ManifestRecord]) -> Vec<PathBuf> {
    records.iter().map(|r| exp.mel_path(&r.utterance_id)).collect()
}

const ACOUSTIC: &str = "train-acoustic";

pub fn acoustic(ctx: &Context, a: TrainAcousticArgs) -> CliResult<()> {
    let cfg = &ctx.config;
    let exp = ctx.experiment(ACOUSTIC, a.exp)?;
    exp.require_data()?;
    require_features(&exp)?;
    let lexicon: PathBuf = cfg.require(a.lexicon, ACOUSTIC, "lexicon")?;
    let steps = cfg.pick(a.steps, ACOUSTIC, "steps", 2000usize)?;
    let batch = cfg.pick(a.batch, ACOUSTIC, "batch", 8usize)?;
    let size: String = cfg.pick(a.size, ACOUSTIC, "size", "toy".to_string())?;
    let lr: Option<f64> = cfg.opt(a.lr, ACOUSTIC, "lr")?;
    let log_every = cfg.pick(a.log_every, ACOUSTIC, "log_every", 50usize)?.max(1);
    let seed = cfg.pick(a.seed, ACOUSTIC, "seed", 0u64)?;
    if batch == 0 || steps == 0 {
        return Err(usage("--steps and --batch must be positive"));
    }

    let train = load_split(&exp.train_manifest())?;
    let dev = load_split(&exp.dev_manifest())?;
    if train.is_empty() {
        fail!("{} is empty", exp.train_manifest().display());
    }
    let mut inputs = vec![exp.train_manifest(), exp.dev_manifest(), lexicon.clone()];
    inputs.extend(mel_inputs(&exp, &train));
    inputs.extend(mel_inputs(&exp, &dev));
    let stage = Stage::new(ACOUSTIC, exp.ckpt().join("train-acoustic.json"), &inputs)?
        .arg("steps", steps)
        .arg("batch", batch)
        .arg("size", &size)
        .arg("lr", lr.map(|v| v.to_string()).unwrap_or_default())
        .arg("log_every", log_every)
        .seed("seed", seed);
    if ctx.skip(&stage)?.is_some() {
        return Ok(());
    }

    let fe = frontend(&lexicon)?;
    let train_ex = examples(&exp, &fe, &train)?;
    let dev_ex = examples(&exp, &fe, &dev)?;
    let speakers = SpeakerTable::new(train.iter().map(|r| r.speaker_id.clone()).collect());
    let inv = fe.inventory.len();
    let mut config = match size.as_str() {
        "toy" => AcousticConfig::toy(inv, speakers.len()),
        "reference" => AcousticConfig::reference(inv, speakers.len()),
        other => return Err(usage(format!("unknown size {other:?}; expected toy or reference"))),
    };
    if let Some(lr) = lr {
        config.optimizer.learning_rate = lr;
    }
    let mut model = AcousticModel::new(config, speakers, &fe.inventory, seed)?;
    model.set_normalization(MelNormalization::fit(train_ex.iter().map(|e| &e.mel)));
    let mut opt = model.optimizer();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xac05_71c0);
    let per_step = batch.min(train_ex.len());
    log::info!(
        "training acoustic model on {} utterances ({} speakers), {steps} steps of {per_step}",
        train_ex.len(),
        model.speakers().len()
    );

    let mut log_tsv = String::from("step\tloss\tmel_loss\tstop_loss\tteacher_forced_rate\n");
    let mut window = Vec::new();
    for step in 1..=steps {
        let picked: Vec<TrainingExample> = sample(&mut rng, train_ex.len(), per_step)
            .into_iter()
            .map(|i| train_ex[i].clone())
            .collect();
        let report = model.train_step(&mut opt, &picked, &mut rng)?;
        window.push(report);
        if step % log_every == 0 || step == steps {
            let n = window.len() as f64;
            let mean = |f: fn(&polyvox_core::acoustic::TrainStepReport) -> f64| window.iter().map(f).sum::<f64>() / n;
            let (loss, mel, stop) = (mean(|r| r.loss), mean(|r| r.mel_loss), mean(|r| r.stop_loss));
            let mut sampling = polyvox_core::acoustic::SamplingStats::default();
            window.iter().for_each(|r| sampling.merge(&r.sampling));
            writeln!(
                log_tsv,
                "{step}\t{loss:.6}\t{mel:.6}\t{stop:.6}\t{:.4}",
                sampling.rate()
            )
            .expect("string");
            log::info!("step {step}: loss {loss:.4} (mel {mel:.4}, stop {stop:.4})");
            window.clear();
        }
    }

    if !dev_ex.is_empty() {
        let (report, _) = model.compute_gradients(&dev_ex, &mut rng)?;
        writeln!(
            log_tsv,
            "dev\t{:.6}\t{:.6}\t{:.6}\t{:.4}",
            report.loss,
            report.mel_loss,
            report.stop_loss,
            report.sampling.rate()
        )
        .expect("string");
        println!("dev loss {:.4} over {} utterances", report.loss, dev_ex.len());
    }
    let ckpt = exp.acoustic_ckpt();
    model.save(&ckpt)?;
    std::fs::copy(&lexicon, exp.lexicon()).with_context(|| format!("copy {}", lexicon.display()))?;
    let log_path = exp.reports().join("train-acoustic.tsv");
    std::fs::write(&log_path, log_tsv)?;
    stage.finish(&[ckpt.clone(), exp.lexicon(), log_path])?;
    println!("wrote {}", ckpt.display());
    Ok(())
}

const VOCODER: &str = "train-vocoder";

struct Aligned {
    classes: Vec<usize>,
    mel: MelSpectrogram,
}

pub fn vocoder(ctx: &Context, a: TrainVocoderArgs) -> CliResult<()> {
    let cfg = &ctx.config;
    let exp = ctx.experiment(VOCODER, a.exp)?;
    exp.require_data()?;
    require_features(&exp)?;
    let steps = cfg.pick(a.steps, VOCODER, "steps", 5000usize)?;
    let scale = cfg.pick(a.scale, VOCODER, "scale", 8usize)?;
    let eval_every = cfg.pick(a.eval_every, VOCODER, "eval_every", 500usize)?.max(1);
    let max_utts: Option<usize> = cfg.opt(a.max_utts, VOCODER, "max_utts")?;
    let seed = cfg.pick(a.seed, VOCODER, "seed", 0u64)?;
    if steps == 0 || scale == 0 {
        return Err(usage("--steps and --scale must be positive"));
    }

    let mut train = load_split(&exp.train_manifest())?;
    if let Some(m) = max_utts {
        train.truncate(m);
    }
    let dev = load_split(&exp.dev_manifest())?;
    if train.is_empty() {
        fail!("no training utterances");
    }
    let held_out = dev.first().unwrap_or(&train[0]).clone();
    let mut inputs = vec![exp.train_manifest(), exp.dev_manifest()];
    for r in train.iter().chain(std::iter::once(&held_out)) {
        inputs.push(r.audio_path.clone());
        inputs.push(exp.mel_path(&r.utterance_id));
    }
    let stage = Stage::new(VOCODER, exp.ckpt().join("train-vocoder.json"), &inputs)?
        .arg("steps", steps)
        .arg("scale", scale)
        .arg("eval_every", eval_every)
        .arg("max_utts", max_utts.map(|v| v.to_string()).unwrap_or_default())
        .seed("seed", seed);
    if ctx.skip(&stage)?.is_some() {
        return Ok(());
    }

    let mut voc = Vocoder::new(VocoderConfig::scaled(scale), seed)?;
    let align = |r: &ManifestRecord| -> CliResult<Aligned> {
        let clip = load_audio(&r.audio_path, SAMPLE_RATE).with_context(|| format!("utterance {}", r.utterance_id))?;
        let mel = MelSpectrogram::load(&exp.mel_path(&r.utterance_id))?;
        let classes = voc
            .align(&clip, &mel)
            .with_context(|| format!("utterance {}", r.utterance_id))?;
        Ok(Aligned { classes, mel })
    };
    let data: Vec<Aligned> = train.iter().map(align).collect::<CliResult<_>>()?;
    let held = align(&held_out)?;
    log::info!(
        "training vocoder on {} utterances ({:.1} s), {steps} steps",
        data.len(),
        data.iter().map(|d| d.classes.len()).sum::<usize>() as f64 / SAMPLE_RATE as f64
    );

    let mut opt = voc.optimizer();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x70c0_de75);
    let mut log_tsv = String::from("step\tloss\theld_out_accuracy\theld_out_cross_entropy\n");
    let mut recent = Vec::new();
    for step in 1..=steps {
        let u = &data[rng.random_range(0..data.len())];
        recent.push(voc.train_step(&mut opt, &u.classes, &u.mel, &mut rng)?.loss);
        if step % eval_every == 0 || step == steps {
            let loss = recent.iter().sum::<f64>() / recent.len() as f64;
            recent.clear();
            let score = voc.teacher_forced_score(&held.classes, &held.mel)?;
            writeln!(
                log_tsv,
                "{step}\t{loss:.6}\t{:.6}\t{:.6}",
                score.accuracy, score.cross_entropy
            )
            .expect("string");
            log::info!(
                "step {step}: loss {loss:.4}, held-out accuracy {:.4} on {}",
                score.accuracy,
                held_out.utterance_id
            );
        }
    }
    let ckpt = exp.vocoder_ckpt();
    voc.save(&ckpt)?;
    let log_path = exp.reports().join("train-vocoder.tsv");
    std::fs::write(&log_path, log_tsv)?;
    stage.finish(&[ckpt.clone(), log_path])?;
    println!("wrote {}", ckpt.display());
    Ok(())
}
