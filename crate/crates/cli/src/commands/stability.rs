use std::collections::BTreeMap;
use std::path::PathBuf;

use polyvox_core::acoustic::SynthesisRecord;
use polyvox_core::manifest::CorpusManifest;
use polyvox_core::stability::{classify, stability_rate, StabilityConfig, StabilityVerdict};

use super::{usage, Context};
use crate::commands::synth::{load_model, synthesize_all, Sentence};
use crate::error::CliResult;
use crate::fail;
use crate::layout::ExperimentDir;
use crate::runlog::{expand, Stage};
use crate::StabilityArgs;

const CMD: &str = "stability-report";

/// Up to `n` sentences per speaker: development utterances first, then training ones.
pub fn pick_sentences(
    exp: &ExperimentDir,
    speakers: &[String],
    n: usize,
) -> CliResult<BTreeMap<String, Vec<Sentence>>> {
    let mut pools: BTreeMap<String, Vec<Sentence>> = speakers.iter().map(|s| (s.clone(), Vec::new())).collect();
    for path in [exp.dev_manifest(), exp.train_manifest()] {
        if !path.is_file() {
            continue;
        }
        let mut records = CorpusManifest::load(&path)?.records;
        records.sort_by(|a, b| a.utterance_id.cmp(&b.utterance_id));
        for r in records {
            if let Some(pool) = pools.get_mut(&r.speaker_id) {
                if pool.len() < n {
                    pool.push(Sentence {
                        utterance_id: r.utterance_id,
                        speaker_id: r.speaker_id,
                        text: r.text,
                    });
                }
            }
        }
    }
    for (spk, pool) in &pools {
        if pool.len() < n {
            log::warn!("speaker {spk} has only {} sentences; {n} requested", pool.len());
        }
    }
    Ok(pools)
}

pub fn run(ctx: &Context, a: StabilityArgs) -> CliResult<()> {
    let cfg = &ctx.config;
    let defaults = StabilityConfig::default();
    let detector = StabilityConfig {
        skip_threshold: cfg.pick(a.skip_threshold, CMD, "skip_threshold", defaults.skip_threshold)?,
        regression_tolerance: cfg.pick(
            a.regression_tolerance,
            CMD,
            "regression_tolerance",
            defaults.regression_tolerance,
        )?,
        dwell_threshold: cfg.pick(a.dwell_threshold, CMD, "dwell_threshold", defaults.dwell_threshold)?,
    };
    let records_dir: Option<PathBuf> = cfg.opt(a.records, CMD, "records")?;
    let model_name: Option<String> = cfg.opt(a.model, CMD, "model")?.or(cfg.get(CMD, "blend")?);
    let root: PathBuf = cfg.pick(a.root, CMD, "root", PathBuf::from("experiments"))?;
    let n_utts = cfg.pick(a.n_utts, CMD, "n_utts", 75usize)?;
    let seed = cfg.pick(a.seed, CMD, "seed", 0u64)?;
    if n_utts == 0 {
        return Err(usage("--n-utts must be positive"));
    }

    let (label, verdicts, reports_dir, stage) = match records_dir {
        Some(dir) => {
            let label = model_name.unwrap_or_else(|| {
                dir.file_name()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_default()
            });
            let files: Vec<PathBuf> = expand(&dir)?
                .into_iter()
                .filter(|p| p.extension().is_some_and(|e| e == "rec"))
                .collect();
            if files.is_empty() {
                fail!("no .rec files under {}", dir.display());
            }
            let stage = Stage::new(CMD, dir.join("stability-report.json"), &files)?
                .arg("model", &label)
                .arg(
                    "detector",
                    serde_json::to_string(&detector).map_err(anyhow::Error::from)?,
                );
            if ctx.skip(&stage)?.is_some() {
                return Ok(());
            }
            let verdicts = files
                .iter()
                .map(|p| Ok(classify(&SynthesisRecord::load(p)?, &detector)?))
                .collect::<CliResult<Vec<StabilityVerdict>>>()?;
            (label, verdicts, dir, stage)
        }
        None => {
            let name = model_name.ok_or_else(|| usage("--model or --records is required"))?;
            let exp = ExperimentDir::new(&root, &name);
            exp.require_data()?;
            let inputs = vec![
                exp.acoustic_ckpt(),
                exp.lexicon(),
                exp.train_manifest(),
                exp.dev_manifest(),
            ];
            let stage = Stage::new(CMD, exp.reports().join("stability-report.json"), &inputs)?
                .arg("model", &name)
                .arg("n_utts", n_utts)
                .arg(
                    "detector",
                    serde_json::to_string(&detector).map_err(anyhow::Error::from)?,
                )
                .seed("seed", seed);
            if ctx.skip(&stage)?.is_some() {
                return Ok(());
            }
            let (model, fe) = load_model(&exp)?;
            let pools = pick_sentences(&exp, model.speakers().ids(), n_utts)?;
            let sentences: Vec<Sentence> = pools.into_values().flatten().collect();
            log::info!(
                "synthesizing {} utterances for {} speakers",
                sentences.len(),
                model.speakers().len()
            );
            let records = synthesize_all(&model, &fe, &sentences, seed, &exp.synth().join("stability"))?;
            let verdicts = records
                .iter()
                .map(|r| Ok(classify(r, &detector)?))
                .collect::<CliResult<Vec<StabilityVerdict>>>()?;
            (name, verdicts, exp.reports(), stage)
        }
    };

    let report = stability_rate(&label, &verdicts)?;
    std::fs::create_dir_all(&reports_dir)?;
    let text_path = reports_dir.join("stability.txt");
    let tsv_path = reports_dir.join("stability.tsv");
    let json_path = reports_dir.join("stability.json");
    std::fs::write(&text_path, report.to_text())?;
    std::fs::write(&tsv_path, report.to_tsv())?;
    std::fs::write(
        &json_path,
        serde_json::to_string_pretty(&report).map_err(anyhow::Error::from)? + "\n",
    )?;
    stage.finish(&[text_path, tsv_path, json_path])?;
    print!("{}", report.to_text());
    Ok(())
}
