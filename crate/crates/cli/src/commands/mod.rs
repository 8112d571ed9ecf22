use std::path::PathBuf;

use sha2::{Digest, Sha256};

use crate::config::Config;
use crate::error::{CliError, CliResult};
use crate::layout::ExperimentDir;
use crate::runlog::{RunManifest, Stage};
use crate::{Cli, Command, ExperimentArgs};

mod blend;
mod features;
mod mushra;
mod stability;
mod synth;
mod train;

pub struct Context {
    pub config: Config,
    pub force: bool,
}

impl Context {
    /// `<root>/<blend>` from flags or config.
    pub fn experiment(&self, command: &str, args: ExperimentArgs) -> CliResult<ExperimentDir> {
        let root: PathBuf = self
            .config
            .pick(args.root, command, "root", PathBuf::from("experiments"))?;
        let blend: String = self.config.require(args.blend, command, "blend")?;
        Ok(ExperimentDir::new(&root, &blend))
    }

    /// The previous run, unless `--force` was given or anything changed.
    pub fn skip(&self, stage: &Stage) -> CliResult<Option<RunManifest>> {
        if self.force {
            return Ok(None);
        }
        let prev = stage.up_to_date()?;
        if prev.is_some() {
            log::info!(
                "{}: outputs are current ({}); nothing to do",
                stage.command,
                stage.manifest_path.display()
            );
        }
        Ok(prev)
    }
}

pub fn run(cli: Cli) -> CliResult<()> {
    let config = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    let ctx = Context {
        config,
        force: cli.force,
    };
    match cli.command {
        Command::PrepareBlend(a) => blend::run(&ctx, a),
        Command::ExtractFeatures(a) => features::run(&ctx, a),
        Command::TrainAcoustic(a) => train::acoustic(&ctx, a),
        Command::TrainVocoder(a) => train::vocoder(&ctx, a),
        Command::Synth(a) => synth::run(&ctx, a),
        Command::StabilityReport(a) => stability::run(&ctx, a),
        Command::MushraServe(a) => mushra::serve(&ctx, a),
        Command::MushraAnalyze(a) => mushra::analyze(&ctx, a),
    }
}

/// Independent per-utterance seed, so results do not depend on processing order.
pub fn utterance_seed(seed: u64, utterance_id: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(utterance_id.as_bytes());
    u64::from_le_bytes(h.finalize()[..8].try_into().expect("8 bytes"))
}

pub(crate) fn usage(message: impl Into<String>) -> CliError {
    CliError::Usage(message.into())
}
