//! `polyvox` command-line driver.

use std::path::PathBuf;

use clap::{ArgAction, Args, Parser, Subcommand};

pub mod commands;
pub mod config;
pub mod error;
pub mod layout;
pub mod runlog;

pub use config::Config;
pub use error::{CliError, CliResult};

/// Multi-speaker TTS experiments: blends, features, training, synthesis,
/// stability reports and MUSHRA listening tests.
///
/// Exit status: 0 success, 1 runtime failure, 2 usage error.
#[derive(Debug, Parser)]
#[command(name = "polyvox", version)]
pub struct Cli {
    /// Flat `key = value` config file. Flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Rerun a stage even when its manifest shows identical inputs and outputs.
    #[arg(long, global = true)]
    pub force: bool,
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = ArgAction::Count)]
    pub verbose: u8,
    /// Only warnings and errors on stderr.
    #[arg(short, long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Select a training blend from a corpus manifest and split it 90/10 per speaker.
    PrepareBlend(PrepareBlendArgs),
    /// Compute 80-band log-mel features for every utterance of a blend.
    ExtractFeatures(ExperimentArgs),
    /// Train the attention-based acoustic model on a blend.
    TrainAcoustic(TrainAcousticArgs),
    /// Train the autoregressive vocoder on a blend.
    TrainVocoder(TrainVocoderArgs),
    /// Synthesize utterances: attention records and, optionally, audio.
    Synth(SynthArgs),
    /// Classify synthesized utterances for skips, repeats and stuck attention.
    StabilityReport(StabilityArgs),
    /// Host MUSHRA tests over HTTP.
    MushraServe(ServeArgs),
    /// Aggregate MUSHRA scores and test pairwise significance.
    MushraAnalyze(AnalyzeArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::PrepareBlend(_) => "prepare-blend",
            Command::ExtractFeatures(_) => "extract-features",
            Command::TrainAcoustic(_) => "train-acoustic",
            Command::TrainVocoder(_) => "train-vocoder",
            Command::Synth(_) => "synth",
            Command::StabilityReport(_) => "stability-report",
            Command::MushraServe(_) => "mushra-serve",
            Command::MushraAnalyze(_) => "mushra-analyze",
        }
    }
}

#[derive(Debug, Args)]
pub struct PrepareBlendArgs {
    /// Named preset, e.g. sd-8500, fe4-5000, mx7-8500, mx6+1250.
    #[arg(long, conflicts_with = "spec")]
    pub preset: Option<String>,
    /// TOML blend file (`preset`, `name`, `slots`, `gender`, `target`, `seed`, `scale`).
    #[arg(long, value_name = "FILE")]
    pub spec: Option<PathBuf>,
    /// Corpus manifest: `utt TAB speaker [TAB gender] TAB audio TAB text`.
    #[arg(long, value_name = "FILE")]
    pub corpus: Option<PathBuf>,
    /// Experiment root; the blend lands in `<out>/<name>`. [default: experiments]
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Selection seed. [default: the blend file's seed, else 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Uniform factor applied to every per-speaker count. [default: 1]
    #[arg(long)]
    pub scale: Option<f64>,
    /// Target speaker for sd and mx6+ blends. [default: eligible speaker with the most data]
    #[arg(long)]
    pub target: Option<String>,
    /// Directory name for the blend. [default: the blend name]
    #[arg(long)]
    pub name: Option<String>,
    /// Fail when a referenced audio file is missing.
    #[arg(long)]
    pub check_audio: bool,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    /// Experiment root. [default: experiments]
    #[arg(long, value_name = "DIR")]
    pub root: Option<PathBuf>,
    /// Blend directory under the root.
    #[arg(long)]
    pub blend: Option<String>,
}

#[derive(Debug, Args)]
pub struct TrainAcousticArgs {
    #[command(flatten)]
    pub exp: ExperimentArgs,
    /// Pronunciation lexicon (CMU dict format). Copied next to the checkpoint.
    #[arg(long, value_name = "FILE")]
    pub lexicon: Option<PathBuf>,
    /// Optimizer steps. [default: 2000]
    #[arg(long)]
    pub steps: Option<usize>,
    /// Utterances per step. [default: 8]
    #[arg(long)]
    pub batch: Option<usize>,
    /// Layer sizes: toy or reference. [default: toy]
    #[arg(long, value_parser = ["toy", "reference"])]
    pub size: Option<String>,
    /// Learning rate override.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Loss log interval in steps. [default: 50]
    #[arg(long)]
    pub log_every: Option<usize>,
    /// Initialization and batching seed. [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainVocoderArgs {
    #[command(flatten)]
    pub exp: ExperimentArgs,
    /// Optimizer steps. [default: 5000]
    #[arg(long)]
    pub steps: Option<usize>,
    /// Hidden sizes are the reference sizes divided by this factor. [default: 8]
    #[arg(long)]
    pub scale: Option<usize>,
    /// Teacher-forced accuracy check interval in steps. [default: 500]
    #[arg(long)]
    pub eval_every: Option<usize>,
    /// Use at most this many training utterances. [default: all]
    #[arg(long)]
    pub max_utts: Option<usize>,
    /// Initialization and window seed. [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub exp: ExperimentArgs,
    /// Sentences as `utt TAB speaker TAB text`. [default: the blend's dev set]
    #[arg(long, value_name = "FILE")]
    pub text: Option<PathBuf>,
    /// Synthesize at most this many sentences.
    #[arg(long)]
    pub limit: Option<usize>,
    /// Also render audio with the blend's vocoder.
    #[arg(long)]
    pub wav: bool,
    /// Vocoder sampling temperature; 0 picks the most likely class. [default: 1]
    #[arg(long)]
    pub temperature: Option<f64>,
    /// Dropout and sampling seed. [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct StabilityArgs {
    /// Experiment root. [default: experiments]
    #[arg(long, value_name = "DIR")]
    pub root: Option<PathBuf>,
    /// Blend whose acoustic model is evaluated.
    #[arg(long)]
    pub model: Option<String>,
    /// Utterances generated per speaker. [default: 75]
    #[arg(long)]
    pub n_utts: Option<usize>,
    /// Classify existing synthesis records in this directory instead of synthesizing.
    #[arg(long, value_name = "DIR")]
    pub records: Option<PathBuf>,
    /// Largest forward move per block that is not a skip. [default: 4]
    #[arg(long)]
    pub skip_threshold: Option<usize>,
    /// Largest backward move per block that is not a repeat. [default: 2]
    #[arg(long)]
    pub regression_tolerance: Option<usize>,
    /// Blocks on one position before it counts as stuck. [default: 20]
    #[arg(long)]
    pub dwell_threshold: Option<usize>,
    /// Synthesis seed. [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// State directory (event log and snapshot).
    #[arg(long, value_name = "DIR")]
    pub db: Option<PathBuf>,
    /// Listen address. [default: 127.0.0.1:8080]
    #[arg(long)]
    pub addr: Option<String>,
    /// Seconds before an unsubmitted panel reservation lapses. [default: 1800]
    #[arg(long)]
    pub reservation_timeout: Option<u64>,
    /// Events between snapshot compactions. [default: 500]
    #[arg(long)]
    pub compact_every: Option<usize>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Score CSV: panel_id,rater_id,slot,system,score.
    #[arg(long, value_name = "FILE")]
    pub scores: Option<PathBuf>,
    /// Family-wise significance level for Holm correction. [default: 0.05]
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Test type. [default: naturalness]
    #[arg(long, value_parser = ["naturalness", "similarity"])]
    pub mode: Option<String>,
    /// Row label in the summary table. [default: score file stem]
    #[arg(long)]
    pub label: Option<String>,
    /// Comma-separated column order. [default: recording, then best average rank first]
    #[arg(long, value_delimiter = ',')]
    pub systems: Option<Vec<String>>,
    /// Directory for report.txt, report.json and boxplot.tsv.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

/// Parses the command line and runs it; returns the process exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    init_logging(cli.verbose, cli.quiet);
    let name = cli.command.name();
    match commands::run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error[{name}]: {e}");
            if let CliError::Usage(_) = e {
                eprintln!("run `polyvox {name} --help` for usage");
            }
            e.exit_code()
        }
    }
}

fn init_logging(verbose: u8, quiet: bool) {
    let level = match (quiet, verbose) {
        (true, _) => log::LevelFilter::Warn,
        (false, 0) => log::LevelFilter::Info,
        (false, 1) => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .parse_default_env()
        .try_init();
}
