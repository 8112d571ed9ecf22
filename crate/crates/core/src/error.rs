use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("utterance {utterance_id}: text is empty after normalization")]
    EmptyText { utterance_id: String },
    #[error("utterance {utterance_id}: unknown punctuation {chars:?}")]
    UnknownPunctuation { utterance_id: String, chars: Vec<char> },
    #[error("unknown symbol {0:?}")]
    UnknownSymbol(String),
    #[error("symbol id {id} out of range for inventory of {size}")]
    SymbolIdOutOfRange { id: usize, size: usize },
    #[error("invalid symbol inventory: {0}")]
    Inventory(String),
    #[error("lexicon line {line}: {message}")]
    Lexicon { line: usize, message: String },

    #[error("audio is empty")]
    EmptyAudio,
    #[error("audio of {samples} samples is shorter than one {hop}-sample hop")]
    AudioTooShort { samples: usize, hop: usize },
    #[error("fmax {fmax} Hz exceeds Nyquist {nyquist} Hz")]
    AboveNyquist { fmax: f64, nyquist: f64 },
    #[error("mu-law class {0} out of range [0, 1024)")]
    ClassOutOfRange(usize),
    #[error("invalid mel spectrogram: {0}")]
    InvalidMel(String),

    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("empty input sequence")]
    EmptySequence,
    #[error("unknown speaker id {0}")]
    UnknownSpeaker(String),
    #[error("decoder state used before initialization")]
    UninitializedState,
    #[error("non-finite loss for batch [{}]", .utterances.join(", "))]
    NonFiniteLoss { utterances: Vec<String> },
    #[error("non-finite logits at sample {sample}: hidden norm {hidden_norm}, previous class {previous_class}")]
    NonFiniteLogits {
        sample: usize,
        hidden_norm: f64,
        previous_class: usize,
    },
    #[error("audio has {audio} samples but mel has {frames} frames (expects {expected} samples)")]
    Misaligned {
        audio: usize,
        frames: usize,
        expected: usize,
    },
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("speaker {speaker} has {available} utterances, {requested} requested (short by {shortfall})")]
    InsufficientData {
        speaker: String,
        available: usize,
        requested: usize,
        shortfall: usize,
    },
    #[error("unknown blend preset {0:?}")]
    UnknownPreset(String),
    #[error("manifest line {line}: {message}")]
    Manifest { line: usize, message: String },

    #[error("empty attention matrix")]
    EmptyAttention,
    #[error("no verdicts to summarize")]
    NoVerdicts,

    #[error("missing stimulus for system {system:?}, sentence {sentence:?}")]
    MissingStimulus { system: String, sentence: String },
    #[error("unbalanced rating matrix, missing cells: {}", .0.join("; "))]
    UnbalancedRatings(Vec<String>),
    #[error("statistics: {0}")]
    Stats(String),

    #[error("bad container file {path}: {message}")]
    Container { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Wav(#[from] hound::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
