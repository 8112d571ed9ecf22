use std::path::PathBuf;

use anyhow::Context as _;
use polyvox_core::audio::load_audio;
use polyvox_core::manifest::{CorpusManifest, ManifestRecord};
use polyvox_core::melspec::{extract_mel, MelConfig, SAMPLE_RATE};
use rayon::prelude::*;

use super::Context;
use crate::error::CliResult;
use crate::layout::{check_file_stem, ExperimentDir};
use crate::runlog::Stage;
use crate::ExperimentArgs;

const CMD: &str = "extract-features";

/// Train then dev records of a prepared blend.
pub fn blend_records(exp: &ExperimentDir) -> CliResult<Vec<ManifestRecord>> {
    exp.require_data()?;
    let mut records = CorpusManifest::load(&exp.train_manifest())?.records;
    if exp.dev_manifest().is_file() {
        records.extend(CorpusManifest::load(&exp.dev_manifest())?.records);
    }
    for r in &records {
        check_file_stem(&r.utterance_id)?;
    }
    Ok(records)
}

pub fn run(ctx: &Context, a: ExperimentArgs) -> CliResult<()> {
    let exp = ctx.experiment(CMD, a)?;
    let records = blend_records(&exp)?;
    let mut inputs = vec![exp.train_manifest(), exp.dev_manifest()];
    inputs.extend(records.iter().map(|r| r.audio_path.clone()));
    let config = MelConfig::default();
    let stage = Stage::new(CMD, exp.features().join("extract-features.json"), &inputs)?.arg(
        "mel_config",
        serde_json::to_string(&config).map_err(anyhow::Error::from)?,
    );
    if ctx.skip(&stage)?.is_some() {
        return Ok(());
    }

    log::info!("extracting features for {} utterances", records.len());
    let rows: Vec<(String, usize, usize)> = records
        .par_iter()
        .map(|r| -> anyhow::Result<(String, usize, usize)> {
            let clip =
                load_audio(&r.audio_path, SAMPLE_RATE).with_context(|| format!("utterance {}", r.utterance_id))?;
            let mel = extract_mel(&clip, &config).with_context(|| format!("utterance {}", r.utterance_id))?;
            mel.save(&exp.mel_path(&r.utterance_id))?;
            Ok((r.utterance_id.clone(), clip.len(), mel.num_frames()))
        })
        .collect::<anyhow::Result<_>>()?;

    let mut index = String::from("utterance_id\tsamples\tframes\n");
    let mut sorted = rows;
    sorted.sort();
    let mut outputs: Vec<PathBuf> = Vec::with_capacity(sorted.len() + 1);
    for (id, samples, frames) in &sorted {
        index.push_str(&format!("{id}\t{samples}\t{frames}\n"));
        outputs.push(exp.mel_path(id));
    }
    std::fs::write(exp.feature_index(), index)?;
    outputs.push(exp.feature_index());
    stage.finish(&outputs)?;
    let frames: usize = sorted.iter().map(|r| r.2).sum();
    println!(
        "{} utterances, {} frames ({:.1} s) in {}",
        sorted.len(),
        frames,
        frames as f64 * config.frame_shift_ms / 1000.0,
        exp.features().display()
    );
    Ok(())
}
