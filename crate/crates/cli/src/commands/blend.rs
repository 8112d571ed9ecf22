use std::path::PathBuf;

use anyhow::{anyhow, Context as _};
use polyvox_core::blends::{build_blend, BlendSpec};
use polyvox_core::manifest::{validate_manifest, CorpusManifest};

use super::{usage, Context};
use crate::error::CliResult;
use crate::layout::ExperimentDir;
use crate::runlog::Stage;
use crate::PrepareBlendArgs;

const CMD: &str = "prepare-blend";

pub fn run(ctx: &Context, a: PrepareBlendArgs) -> CliResult<()> {
    let cfg = &ctx.config;
    let corpus_path: PathBuf = cfg.require(a.corpus, CMD, "corpus")?;
    let root: PathBuf = cfg.pick(a.out, CMD, "root", PathBuf::from("experiments"))?;
    let preset: Option<String> = match a.preset {
        Some(p) => Some(p),
        None if a.spec.is_none() => cfg.get(CMD, "preset")?,
        None => None,
    };
    let spec_file: Option<PathBuf> = match a.spec {
        Some(s) => Some(s),
        None if preset.is_none() => cfg.get(CMD, "spec")?,
        None => None,
    };
    let mut spec = match (&preset, &spec_file) {
        (Some(p), None) => BlendSpec::preset(p)?,
        (None, Some(f)) => BlendSpec::load(f)?,
        (Some(_), Some(_)) => return Err(usage("give either --preset or --spec, not both")),
        (None, None) => return Err(usage("one of --preset or --spec is required")),
    };
    if let Some(seed) = cfg.opt(a.seed, CMD, "seed")? {
        spec.seed = seed;
    }
    if let Some(scale) = cfg.opt(a.scale, CMD, "scale")? {
        spec.scale = scale;
    }
    if let Some(t) = cfg.opt(a.target, CMD, "target")? {
        spec.target = Some(t);
    }
    spec.validate()?;
    let dir_name: String = cfg.pick(a.name, CMD, "name", spec.name.clone())?;
    let check_audio = a.check_audio || cfg.get(CMD, "check_audio")?.unwrap_or(false);

    let exp = ExperimentDir::new(&root, &dir_name);
    let mut inputs = vec![corpus_path.clone()];
    inputs.extend(spec_file.clone());
    let stage = Stage::new(CMD, exp.data().join("prepare-blend.json"), &inputs)?
        .arg("corpus", corpus_path.display())
        .arg("spec", spec.to_toml()?)
        .arg("check_audio", check_audio)
        .seed("seed", spec.seed);
    if ctx.skip(&stage)?.is_some() {
        return Ok(());
    }

    let corpus = CorpusManifest::load(&corpus_path)?;
    let corpus_file = corpus_path
        .canonicalize()
        .with_context(|| format!("resolve {}", corpus_path.display()))?;
    let base = corpus_file.parent().expect("a file has a parent").to_path_buf();
    let report = validate_manifest(&corpus, check_audio.then_some(base.as_path()));
    if !report.is_clean() {
        let shown: Vec<String> = report.issues.iter().take(10).map(|i| format!("{i:?}")).collect();
        return Err(anyhow!(
            "corpus {} has {} problem(s): {}",
            corpus_path.display(),
            report.issues.len(),
            shown.join("; ")
        )
        .into());
    }

    let mut blend = build_blend(&corpus, &spec)?;
    for r in blend.train.records.iter_mut().chain(blend.dev.records.iter_mut()) {
        r.audio_path = corpus.audio_path(r, &base);
    }

    exp.create()?;
    let train = exp.train_manifest();
    let dev = exp.dev_manifest();
    let spec_out = exp.data().join("blend.toml");
    let splits_out = exp.data().join("splits.tsv");
    blend.train.save(&train)?;
    blend.dev.save(&dev)?;
    std::fs::write(&spec_out, spec.to_toml()?)?;
    let mut table = String::from("speaker_id\tselected\ttrain\tdev\n");
    for s in &blend.splits {
        table.push_str(&format!("{}\t{}\t{}\t{}\n", s.speaker_id, s.selected, s.train, s.dev));
    }
    std::fs::write(&splits_out, &table)?;
    stage.finish(&[train, dev, spec_out, splits_out])?;

    println!(
        "blend {} (seed {}, scale {}){}",
        spec.name,
        spec.seed,
        spec.scale,
        blend
            .target
            .as_ref()
            .map(|t| format!(", target {t}"))
            .unwrap_or_default()
    );
    println!("{:<16} {:>9} {:>9} {:>7}", "speaker", "selected", "train", "dev");
    for s in &blend.splits {
        println!("{:<16} {:>9} {:>9} {:>7}", s.speaker_id, s.selected, s.train, s.dev);
    }
    println!(
        "{:<16} {:>9} {:>9} {:>7}",
        "total",
        blend.total(),
        blend.train.len(),
        blend.dev.len()
    );
    println!("wrote {}", exp.data().display());
    Ok(())
}
