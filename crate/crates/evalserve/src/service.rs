//! Quota accounting and persistence behind a single writer lock.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use parking_lot::Mutex;
use polyvox_core::mushra::{assemble_panels, write_scores, PanelPlan, ScoreRecord, StimulusCatalog, TestMode, ANCHOR};
use sha2::{Digest, Sha256};

use crate::error::ServiceError;
use crate::model::*;
use crate::store::{Event, Store};

#[derive(Debug, Clone)]
pub struct ServiceOptions {
    pub reservation_timeout: Duration,
    /// Compact the log into a snapshot after this many appended events.
    pub compact_every: usize,
}

impl Default for ServiceOptions {
    fn default() -> Self {
        Self {
            reservation_timeout: Duration::from_secs(30 * 60),
            compact_every: 500,
        }
    }
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as u64)
}

#[derive(Debug, Clone, Copy)]
struct Reservation {
    expires: Instant,
    dispensed_at_ms: u64,
}

#[derive(Debug, Default)]
struct PanelState {
    /// rater → index into the test's rating list.
    completed: BTreeMap<String, usize>,
    reservations: HashMap<String, Reservation>,
}

impl PanelState {
    fn prune(&mut self, now: Instant) {
        self.reservations.retain(|_, r| r.expires > now);
    }

    /// Raters counted against the quota, excluding `rater`.
    fn load_excluding(&self, rater: &str) -> usize {
        self.completed.len() + self.reservations.keys().filter(|r| *r != rater).count()
    }
}

#[derive(Debug)]
struct TestState {
    record: TestRecord,
    panels: Vec<PanelState>,
    /// Copy-on-write so exports can read without holding the writer lock.
    ratings: Arc<Vec<RatingRecord>>,
}

#[derive(Debug)]
struct State {
    store: Store,
    events: Vec<Event>,
    tests: BTreeMap<String, TestState>,
    sessions: HashMap<String, Session>,
}

impl State {
    fn apply(&mut self, event: &Event) {
        match event {
            Event::TestCreated(t) => {
                let panels = t.panels.iter().map(|_| PanelState::default()).collect();
                self.tests.insert(
                    t.test_id.clone(),
                    TestState {
                        record: t.clone(),
                        panels,
                        ratings: Arc::new(Vec::new()),
                    },
                );
            }
            Event::SessionOpened(s) => {
                self.sessions.insert(s.session_id.clone(), s.clone());
            }
            Event::RatingSubmitted(r) => {
                if let Some(t) = self.tests.get_mut(&r.test_id) {
                    if let Some(idx) = t.record.panels.iter().position(|p| p.panel_id == r.panel_id) {
                        let n = t.ratings.len();
                        Arc::make_mut(&mut t.ratings).push(r.clone());
                        t.panels[idx].completed.insert(r.rater_id.clone(), n);
                        t.panels[idx].reservations.remove(&r.rater_id);
                    }
                }
            }
        }
    }

    fn persist(&mut self, event: Event, compact_every: usize) -> Result<(), ServiceError> {
        self.store.append(&event)?;
        self.apply(&event);
        self.events.push(event);
        if self.store.appended() >= compact_every {
            self.store.compact(&self.events)?;
        }
        Ok(())
    }
}

/// The evaluation service. All mutations go through one lock, so quota
/// checks and the writes they guard are atomic with respect to each other.
#[derive(Debug)]
pub struct EvalService {
    state: Mutex<State>,
    options: ServiceOptions,
}

fn test_id_for(config: &TestConfig) -> Result<String, ServiceError> {
    let bytes = serde_json::to_vec(config)?;
    Ok(hex::encode(&Sha256::digest(&bytes)[..8]))
}

fn stimulus_path(dir: &Path, system: &str, sentence: &str) -> PathBuf {
    dir.join(system).join(format!("{sentence}.wav"))
}

impl EvalService {
    pub fn open(dir: &Path, options: ServiceOptions) -> Result<Self, ServiceError> {
        let (store, events) = Store::open(dir)?;
        let mut state = State {
            store,
            events: Vec::new(),
            tests: BTreeMap::new(),
            sessions: HashMap::new(),
        };
        for ev in &events {
            state.apply(ev);
        }
        state.events = events;
        Ok(Self {
            state: Mutex::new(state),
            options,
        })
    }

    pub fn options(&self) -> &ServiceOptions {
        &self.options
    }

    /// Validates the config, assembles panels and persists the test. The id
    /// is a hash of the config, so re-creating an identical test returns the
    /// existing one.
    pub fn create_test(&self, config: TestConfig) -> Result<TestSummary, ServiceError> {
        if config.systems.is_empty() || config.sentences.is_empty() {
            return Err(ServiceError::Invalid("systems and sentences must be non-empty".into()));
        }
        if config.quota == 0 {
            return Err(ServiceError::Invalid("quota must be at least 1".into()));
        }
        let bad_len: Vec<String> = config
            .sentences
            .iter()
            .filter(|s| !(MIN_SENTENCE_WORDS..=MAX_SENTENCE_WORDS).contains(&s.word_count()))
            .map(|s| format!("{} ({} words)", s.id, s.word_count()))
            .collect();
        if !bad_len.is_empty() {
            return Err(ServiceError::Invalid(format!(
                "sentences must have {MIN_SENTENCE_WORDS} to {MAX_SENTENCE_WORDS} words: {}",
                bad_len.join(", ")
            )));
        }
        let mut catalog = StimulusCatalog::default();
        let mut missing = Vec::new();
        let systems = std::iter::once(ANCHOR).chain(config.systems.iter().map(String::as_str));
        for system in systems {
            for s in &config.sentences {
                let path = stimulus_path(&config.stimuli_dir, system, &s.id);
                if path.is_file() {
                    catalog.insert(system, &s.id, path);
                } else {
                    missing.push(path.display().to_string());
                }
            }
        }
        if config.mode == TestMode::Similarity {
            for s in &config.sentences {
                let path = stimulus_path(&config.stimuli_dir, "reference", &s.id);
                if path.is_file() {
                    catalog.references.insert(s.id.clone(), path);
                } else {
                    missing.push(path.display().to_string());
                }
            }
        }
        if !missing.is_empty() {
            return Err(ServiceError::Invalid(format!(
                "missing stimuli: {}",
                missing.join(", ")
            )));
        }
        let plan = PanelPlan {
            systems: config.systems.clone(),
            sentences: config.sentences.iter().map(|s| s.id.clone()).collect(),
            raters_per_panel: config.quota,
            seed: config.seed,
            mode: config.mode,
        };
        let panels = assemble_panels(&plan, &catalog).map_err(|e| ServiceError::Invalid(e.to_string()))?;
        let test_id = test_id_for(&config)?;

        let mut state = self.state.lock();
        if state.tests.contains_key(&test_id) {
            drop(state);
            let mut summary = self.summary(&test_id)?;
            summary.created = false;
            return Ok(summary);
        }
        let record = TestRecord {
            test_id: test_id.clone(),
            config,
            panels,
            created_at_ms: now_ms(),
        };
        state.persist(Event::TestCreated(record), self.options.compact_every)?;
        drop(state);
        self.summary(&test_id)
    }

    pub fn summary(&self, test_id: &str) -> Result<TestSummary, ServiceError> {
        let mut state = self.state.lock();
        let now = Instant::now();
        let t = state
            .tests
            .get_mut(test_id)
            .ok_or_else(|| ServiceError::NotFound(format!("test {test_id}")))?;
        let panels = t
            .record
            .panels
            .iter()
            .zip(&mut t.panels)
            .map(|(p, st)| {
                st.prune(now);
                PanelProgress {
                    panel_id: p.panel_id.clone(),
                    completed: st.completed.len(),
                    reserved: st.reservations.len(),
                    quota: p.quota,
                }
            })
            .collect();
        Ok(TestSummary {
            test_id: test_id.into(),
            name: t.record.config.name.clone(),
            mode: t.record.config.mode,
            created: true,
            panels,
        })
    }

    pub fn test(&self, test_id: &str) -> Result<TestRecord, ServiceError> {
        let state = self.state.lock();
        state
            .tests
            .get(test_id)
            .map(|t| t.record.clone())
            .ok_or_else(|| ServiceError::NotFound(format!("test {test_id}")))
    }

    pub fn open_session(&self, test_id: &str, qualification: Option<String>) -> Result<Session, ServiceError> {
        let mut state = self.state.lock();
        if !state.tests.contains_key(test_id) {
            return Err(ServiceError::NotFound(format!("test {test_id}")));
        }
        let session = Session {
            session_id: uuid::Uuid::new_v4().simple().to_string(),
            test_id: test_id.into(),
            rater_id: format!("r-{}", &uuid::Uuid::new_v4().simple().to_string()[..12]),
            qualification,
            started_at_ms: now_ms(),
        };
        state.persist(Event::SessionOpened(session.clone()), self.options.compact_every)?;
        Ok(session)
    }

    /// The rater's current reservation if still live, otherwise the
    /// least-filled panel that is under quota and not yet rated by them.
    pub fn next_panel(&self, session_id: &str) -> Result<NextPanel, ServiceError> {
        let mut guard = self.state.lock();
        let state = &mut *guard;
        let session = state
            .sessions
            .get(session_id)
            .cloned()
            .ok_or_else(|| ServiceError::NotFound(format!("session {session_id}")))?;
        let t = state
            .tests
            .get_mut(&session.test_id)
            .ok_or_else(|| ServiceError::NotFound(format!("test {}", session.test_id)))?;
        let now = Instant::now();
        let rater = &session.rater_id;
        for st in &mut t.panels {
            st.prune(now);
        }
        let held = t.panels.iter().position(|st| st.reservations.contains_key(rater));
        let chosen = held.or_else(|| {
            t.panels
                .iter()
                .enumerate()
                .filter(|(i, st)| {
                    !st.completed.contains_key(rater) && st.load_excluding(rater) < t.record.panels[*i].quota
                })
                .min_by_key(|(i, st)| (st.load_excluding(rater), *i))
                .map(|(i, _)| i)
        });
        let Some(idx) = chosen else {
            return Ok(NextPanel::Done);
        };
        let reservation = t.panels[idx].reservations.entry(rater.clone()).or_insert(Reservation {
            expires: now,
            dispensed_at_ms: now_ms(),
        });
        reservation.expires = now + self.options.reservation_timeout;
        let panel = &t.record.panels[idx];
        let base = format!("/audio/{}/{}", t.record.test_id, panel.panel_id);
        let sentence_text = t
            .record
            .config
            .sentences
            .iter()
            .find(|s| s.id == panel.sentence_id)
            .map(|s| s.text.clone())
            .unwrap_or_default();
        Ok(NextPanel::Panel(PanelView {
            test_id: t.record.test_id.clone(),
            panel_id: panel.panel_id.clone(),
            mode: t.record.config.mode,
            sentence_text,
            slots: panel
                .stimuli
                .iter()
                .map(|s| SlotView {
                    slot: s.slot,
                    audio_url: format!("{base}/{}.wav", s.slot),
                })
                .collect(),
            reference_url: panel.reference.as_ref().map(|_| format!("{base}/reference.wav")),
        }))
    }

    /// Persists a complete rating. Replaying the same submission token is
    /// acknowledged without a second record; any other repeat is a conflict.
    pub fn submit(&self, session_id: &str, panel_id: &str, sub: RatingSubmission) -> Result<SubmitAck, ServiceError> {
        let mut guard = self.state.lock();
        let state = &mut *guard;
        let session = state
            .sessions
            .get(session_id)
            .cloned()
            .ok_or_else(|| ServiceError::NotFound(format!("session {session_id}")))?;
        let t = state
            .tests
            .get_mut(&session.test_id)
            .ok_or_else(|| ServiceError::NotFound(format!("test {}", session.test_id)))?;
        let idx = t
            .record
            .panels
            .iter()
            .position(|p| p.panel_id == panel_id)
            .ok_or_else(|| ServiceError::NotFound(format!("panel {panel_id}")))?;
        let rater = session.rater_id.clone();

        if let Some(&prev) = t.panels[idx].completed.get(&rater) {
            let prev = &t.ratings[prev];
            return match (&prev.submission_token, &sub.submission_token) {
                (Some(a), Some(b)) if a == b => Ok(SubmitAck {
                    panel_id: panel_id.into(),
                    rater_id: rater,
                    replay: true,
                }),
                _ => Err(ServiceError::Conflict(format!(
                    "rater {rater} already rated panel {panel_id}"
                ))),
            };
        }

        let slots = t.record.panels[idx].stimuli.len();
        let mut scores = vec![None; slots];
        for s in &sub.scores {
            if s.slot >= slots {
                return Err(ServiceError::Invalid(format!(
                    "slot {} out of range (panel has {slots})",
                    s.slot
                )));
            }
            if !(s.score.is_finite() && (0.0..=100.0).contains(&s.score)) {
                return Err(ServiceError::Invalid(format!(
                    "slot {} score {} outside [0, 100]",
                    s.slot, s.score
                )));
            }
            if scores[s.slot].replace(s.score).is_some() {
                return Err(ServiceError::Invalid(format!("slot {} scored twice", s.slot)));
            }
        }
        let unscored: Vec<String> = (0..slots)
            .filter(|&i| scores[i].is_none())
            .map(|i| i.to_string())
            .collect();
        if !unscored.is_empty() {
            return Err(ServiceError::Invalid(format!(
                "unscored slots: {}",
                unscored.join(", ")
            )));
        }

        let now = Instant::now();
        let st = &mut t.panels[idx];
        st.prune(now);
        let dispensed_at_ms = st.reservations.get(&rater).map(|r| r.dispensed_at_ms);
        if dispensed_at_ms.is_none() && st.load_excluding(&rater) >= t.record.panels[idx].quota {
            return Err(ServiceError::Conflict(format!("panel {panel_id} is at its quota")));
        }
        let record = RatingRecord {
            test_id: session.test_id.clone(),
            panel_id: panel_id.into(),
            rater_id: rater.clone(),
            session_id: session_id.into(),
            submission_token: sub.submission_token,
            scores: scores.into_iter().map(|s| s.expect("checked")).collect(),
            dispensed_at_ms,
            submitted_at_ms: now_ms(),
        };
        state.persist(Event::RatingSubmitted(record), self.options.compact_every)?;
        Ok(SubmitAck {
            panel_id: panel_id.into(),
            rater_id: rater,
            replay: false,
        })
    }

    /// Persisted ratings in submission order.
    pub fn ratings(&self, test_id: &str) -> Result<Arc<Vec<RatingRecord>>, ServiceError> {
        let state = self.state.lock();
        state
            .tests
            .get(test_id)
            .map(|t| Arc::clone(&t.ratings))
            .ok_or_else(|| ServiceError::NotFound(format!("test {test_id}")))
    }

    /// One score line per rated slot, in the format `mushra-analyze` reads.
    pub fn score_records(&self, test_id: &str) -> Result<Vec<ScoreRecord>, ServiceError> {
        let test = self.test(test_id)?;
        let ratings = self.ratings(test_id)?;
        let mut out = Vec::new();
        for r in ratings.iter() {
            let panel = test.panel(&r.panel_id).expect("rating for known panel");
            for (slot, &score) in r.scores.iter().enumerate() {
                out.push(ScoreRecord {
                    panel_id: r.panel_id.clone(),
                    rater_id: r.rater_id.clone(),
                    slot,
                    system: panel.stimuli[slot].system.clone(),
                    score,
                });
            }
        }
        Ok(out)
    }

    pub fn export_csv(&self, test_id: &str) -> Result<String, ServiceError> {
        let records = self.score_records(test_id)?;
        let mut buf = Vec::new();
        if records.is_empty() {
            buf.extend_from_slice(b"panel_id,rater_id,slot,system,score\n");
        } else {
            write_scores(&mut buf, &records).map_err(|e| ServiceError::Storage(e.to_string()))?;
        }
        String::from_utf8(buf).map_err(|e| ServiceError::Storage(e.to_string()))
    }

    /// File behind an audio URL; `file` is `<slot>.wav` or `reference.wav`.
    pub fn audio_path(&self, test_id: &str, panel_id: &str, file: &str) -> Result<PathBuf, ServiceError> {
        let test = self.test(test_id)?;
        let panel = test
            .panel(panel_id)
            .ok_or_else(|| ServiceError::NotFound(format!("panel {panel_id}")))?;
        let stem = file
            .strip_suffix(".wav")
            .ok_or_else(|| ServiceError::NotFound(file.into()))?;
        if stem == "reference" {
            return panel
                .reference
                .clone()
                .ok_or_else(|| ServiceError::NotFound("reference".into()));
        }
        let slot: usize = stem.parse().map_err(|_| ServiceError::NotFound(file.into()))?;
        panel
            .stimuli
            .get(slot)
            .map(|s| s.audio.clone())
            .ok_or_else(|| ServiceError::NotFound(format!("slot {slot}")))
    }

    pub fn compact(&self) -> Result<(), ServiceError> {
        let mut guard = self.state.lock();
        let state = &mut *guard;
        state.store.compact(&state.events)
    }
}
