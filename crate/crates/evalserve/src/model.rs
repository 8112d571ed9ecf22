use std::path::PathBuf;

use polyvox_core::mushra::{MushraPanel, TestMode};
use serde::{Deserialize, Serialize};

pub const MIN_SENTENCE_WORDS: usize = 5;
pub const MAX_SENTENCE_WORDS: usize = 30;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceSpec {
    pub id: String,
    pub text: String,
}

impl SentenceSpec {
    /// Whitespace-separated words.
    pub fn word_count(&self) -> usize {
        self.text.split_whitespace().count()
    }
}

/// Stimuli live at `<stimuli_dir>/<system>/<sentence id>.wav`; recordings
/// under the `recording` system and similarity references under `reference`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestConfig {
    pub name: String,
    /// Systems under test, without the recording anchor.
    pub systems: Vec<String>,
    pub sentences: Vec<SentenceSpec>,
    pub stimuli_dir: PathBuf,
    #[serde(default = "default_quota")]
    pub quota: usize,
    #[serde(default = "default_mode")]
    pub mode: TestMode,
    #[serde(default)]
    pub seed: u64,
}

fn default_quota() -> usize {
    10
}

fn default_mode() -> TestMode {
    TestMode::Naturalness
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestRecord {
    pub test_id: String,
    pub config: TestConfig,
    pub panels: Vec<MushraPanel>,
    pub created_at_ms: u64,
}

impl TestRecord {
    pub fn panel(&self, panel_id: &str) -> Option<&MushraPanel> {
        self.panels.iter().find(|p| p.panel_id == panel_id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    /// Opaque token identifying the session in URLs.
    pub session_id: String,
    pub test_id: String,
    pub rater_id: String,
    /// Free-form self-reported qualification; never interpreted.
    pub qualification: Option<String>,
    pub started_at_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingRecord {
    pub test_id: String,
    pub panel_id: String,
    pub rater_id: String,
    pub session_id: String,
    pub submission_token: Option<String>,
    /// Score per slot, indexed by slot.
    pub scores: Vec<f64>,
    pub dispensed_at_ms: Option<u64>,
    pub submitted_at_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotScore {
    pub slot: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingSubmission {
    /// Client-chosen token; resending the same token is an idempotent replay.
    #[serde(default)]
    pub submission_token: Option<String>,
    pub scores: Vec<SlotScore>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotView {
    pub slot: usize,
    pub audio_url: String,
}

/// A panel as a rater sees it: slots in server order, no system names.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PanelView {
    pub test_id: String,
    pub panel_id: String,
    pub mode: TestMode,
    pub sentence_text: String,
    pub slots: Vec<SlotView>,
    pub reference_url: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum NextPanel {
    Panel(PanelView),
    Done,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubmitAck {
    pub panel_id: String,
    pub rater_id: String,
    /// True when this call matched an already persisted submission.
    pub replay: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PanelProgress {
    pub panel_id: String,
    pub completed: usize,
    pub reserved: usize,
    pub quota: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestSummary {
    pub test_id: String,
    pub name: String,
    pub mode: TestMode,
    pub created: bool,
    pub panels: Vec<PanelProgress>,
}
