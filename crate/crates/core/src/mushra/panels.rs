//! Randomized MUSHRA panels with a hidden recording anchor.

use std::collections::BTreeMap;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// System label of the natural recording.
pub const ANCHOR: &str = "recording";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestMode {
    Naturalness,
    Similarity,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stimulus {
    pub slot: usize,
    pub system: String,
    pub audio: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MushraPanel {
    pub panel_id: String,
    pub sentence_id: String,
    /// Ordered by slot.
    pub stimuli: Vec<Stimulus>,
    /// Reference clip of a different sentence (similarity mode only).
    pub reference: Option<PathBuf>,
    /// Ratings wanted for this panel.
    pub quota: usize,
}

impl MushraPanel {
    pub fn anchor_slot(&self) -> Option<usize> {
        self.stimuli.iter().find(|s| s.system == ANCHOR).map(|s| s.slot)
    }

    pub fn system_at(&self, slot: usize) -> Option<&str> {
        self.stimuli.get(slot).map(|s| s.system.as_str())
    }
}

/// Audio for every (system, sentence) pair; recordings are stored under [`ANCHOR`].
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StimulusCatalog {
    pub audio: BTreeMap<(String, String), PathBuf>,
    /// Similarity references keyed by sentence.
    pub references: BTreeMap<String, PathBuf>,
}

impl StimulusCatalog {
    pub fn insert(&mut self, system: &str, sentence: &str, audio: impl Into<PathBuf>) {
        self.audio.insert((system.into(), sentence.into()), audio.into());
    }

    pub fn get(&self, system: &str, sentence: &str) -> Option<&PathBuf> {
        self.audio.get(&(system.to_string(), sentence.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelPlan {
    /// Systems under test, excluding the anchor.
    pub systems: Vec<String>,
    pub sentences: Vec<String>,
    pub raters_per_panel: usize,
    pub seed: u64,
    pub mode: TestMode,
}

/// One panel per sentence with the anchor plus every system, slot order an
/// independent seeded permutation per panel.
pub fn assemble_panels(plan: &PanelPlan, catalog: &StimulusCatalog) -> Result<Vec<MushraPanel>> {
    if plan.systems.iter().any(|s| s == ANCHOR) {
        return Err(Error::Config(format!(
            "{ANCHOR:?} is added automatically and must not be listed"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    let mut panels = Vec::with_capacity(plan.sentences.len());
    for (i, sentence) in plan.sentences.iter().enumerate() {
        let mut systems: Vec<&str> = std::iter::once(ANCHOR)
            .chain(plan.systems.iter().map(String::as_str))
            .collect();
        systems.shuffle(&mut rng);
        let stimuli = systems
            .into_iter()
            .enumerate()
            .map(|(slot, system)| {
                let audio = catalog
                    .get(system, sentence)
                    .cloned()
                    .ok_or_else(|| Error::MissingStimulus {
                        system: system.into(),
                        sentence: sentence.clone(),
                    })?;
                Ok(Stimulus {
                    slot,
                    system: system.into(),
                    audio,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let reference = match plan.mode {
            TestMode::Naturalness => None,
            TestMode::Similarity => {
                Some(
                    catalog
                        .references
                        .get(sentence)
                        .cloned()
                        .ok_or_else(|| Error::MissingStimulus {
                            system: "reference".into(),
                            sentence: sentence.clone(),
                        })?,
                )
            }
        };
        panels.push(MushraPanel {
            panel_id: format!("p{:04}", i + 1),
            sentence_id: sentence.clone(),
            stimuli,
            reference,
            quota: plan.raters_per_panel,
        });
    }
    Ok(panels)
}
