//! Training-set blends: speaker-dependent, female-only, balanced mixed and
//! unbalanced target-speaker sets, each split 90/10 per speaker.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::manifest::{CorpusManifest, Gender, ManifestRecord};

/// Which speaker fills a slot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpeakerSlot {
    /// The blend's target speaker.
    Target,
    /// The next unused eligible speaker in id order.
    Any,
    Named(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotRequest {
    pub speaker: SpeakerSlot,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlendSpec {
    pub name: String,
    pub slots: Vec<SlotRequest>,
    #[serde(default)]
    pub gender: Option<Gender>,
    /// Explicit target speaker; otherwise the eligible speaker with the most data.
    #[serde(default)]
    pub target: Option<String>,
    #[serde(default)]
    pub seed: u64,
    /// Uniform factor applied to every requested count.
    #[serde(default = "one")]
    pub scale: f64,
}

fn one() -> f64 {
    1.0
}

impl BlendSpec {
    fn uniform(name: &str, speakers: usize, count: usize, gender: Option<Gender>) -> Self {
        Self {
            name: name.into(),
            slots: (0..speakers)
                .map(|_| SlotRequest {
                    speaker: SpeakerSlot::Any,
                    count,
                })
                .collect(),
            gender,
            target: None,
            seed: 0,
            scale: 1.0,
        }
    }

    fn dependent(count: usize) -> Self {
        Self {
            name: format!("sd-{count}"),
            slots: vec![SlotRequest {
                speaker: SpeakerSlot::Target,
                count,
            }],
            gender: Some(Gender::Female),
            target: None,
            seed: 0,
            scale: 1.0,
        }
    }

    fn unbalanced(target_count: usize) -> Self {
        let mut slots = vec![SlotRequest {
            speaker: SpeakerSlot::Target,
            count: target_count,
        }];
        slots.extend((0..6).map(|_| SlotRequest {
            speaker: SpeakerSlot::Any,
            count: 5000,
        }));
        Self {
            name: format!("mx6+{target_count}"),
            slots,
            gender: None,
            target: None,
            seed: 0,
            scale: 1.0,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        table1_presets()
            .into_iter()
            .find(|p| p.name == name)
            .ok_or_else(|| Error::UnknownPreset(name.into()))
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_scale(mut self, scale: f64) -> Self {
        self.scale = scale;
        self
    }

    pub fn with_target(mut self, target: impl Into<String>) -> Self {
        self.target = Some(target.into());
        self
    }

    pub fn scaled_count(&self, count: usize) -> usize {
        if self.scale == 1.0 {
            count
        } else {
            ((count as f64 * self.scale).round() as usize).max(1)
        }
    }

    /// Sum of requested counts after scaling.
    pub fn total(&self) -> usize {
        self.slots.iter().map(|s| self.scaled_count(s.count)).sum()
    }

    pub fn validate(&self) -> Result<()> {
        let targets = self.slots.iter().filter(|s| s.speaker == SpeakerSlot::Target).count();
        if targets > 1 {
            return Err(Error::Config(format!(
                "blend {} names more than one target slot",
                self.name
            )));
        }
        if self.slots.is_empty() {
            return Err(Error::Config(format!("blend {} has no slots", self.name)));
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::Config(format!("blend scale {} must be positive", self.scale)));
        }
        Ok(())
    }

    /// TOML text. A `preset` key starts from a named preset; explicit keys override it.
    pub fn parse(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct File {
            preset: Option<String>,
            name: Option<String>,
            slots: Option<Vec<SlotRequest>>,
            gender: Option<Gender>,
            target: Option<String>,
            seed: Option<u64>,
            scale: Option<f64>,
        }
        let f: File = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let mut spec = match (&f.preset, &f.slots) {
            (Some(p), _) => Self::preset(p)?,
            (None, Some(_)) => Self {
                name: String::new(),
                slots: Vec::new(),
                gender: None,
                target: None,
                seed: 0,
                scale: 1.0,
            },
            (None, None) => return Err(Error::Config("blend file needs `preset` or `slots`".into())),
        };
        if let Some(n) = f.name {
            spec.name = n;
        }
        if let Some(s) = f.slots {
            spec.slots = s;
        }
        if f.gender.is_some() {
            spec.gender = f.gender;
        }
        if f.target.is_some() {
            spec.target = f.target;
        }
        if let Some(s) = f.seed {
            spec.seed = s;
        }
        if let Some(s) = f.scale {
            spec.scale = s;
        }
        if spec.name.is_empty() {
            return Err(Error::Config("blend file needs a name".into()));
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}

/// The eleven training configurations used in the stability study.
pub fn table1_presets() -> Vec<BlendSpec> {
    let mut v = Vec::new();
    for n in [8500, 15000, 25000] {
        v.push(BlendSpec::dependent(n));
    }
    for n in [2500, 5000, 8500] {
        v.push(BlendSpec::uniform(&format!("fe4-{n}"), 4, n, Some(Gender::Female)));
    }
    for n in [2500, 5000, 8500] {
        v.push(BlendSpec::uniform(&format!("mx7-{n}"), 7, n, None));
    }
    for n in [1250, 2500] {
        v.push(BlendSpec::unbalanced(n));
    }
    v
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeakerSplit {
    pub speaker_id: String,
    pub selected: usize,
    pub train: usize,
    pub dev: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Blend {
    pub spec: BlendSpec,
    pub target: Option<String>,
    pub splits: Vec<SpeakerSplit>,
    pub train: CorpusManifest,
    pub dev: CorpusManifest,
}

impl Blend {
    pub fn total(&self) -> usize {
        self.train.len() + self.dev.len()
    }
}

/// `round(0.1 × n)` development utterances; the rest train.
pub fn split_counts(n: usize) -> (usize, usize) {
    let dev = (n as f64 * 0.1).round() as usize;
    (n - dev, dev)
}

fn speaker_seed(seed: u64, speaker: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(speaker.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

/// Maps slots to concrete speakers.
pub fn resolve_speakers(corpus: &CorpusManifest, spec: &BlendSpec) -> Result<Vec<(String, usize)>> {
    spec.validate()?;
    let counts = corpus.speaker_counts();
    let genders = corpus.speaker_genders();
    let eligible: Vec<&String> = counts
        .keys()
        .filter(|s| spec.gender.is_none_or(|g| genders[*s] == g))
        .collect();
    let needs_target = spec.slots.iter().any(|s| s.speaker == SpeakerSlot::Target);
    let target = if needs_target {
        Some(match &spec.target {
            Some(t) => {
                if !counts.contains_key(t) {
                    return Err(Error::UnknownSpeaker(t.clone()));
                }
                t.clone()
            }
            None => eligible
                .iter()
                .max_by(|a, b| counts[**a].cmp(&counts[**b]).then_with(|| b.cmp(a)))
                .map(|s| s.to_string())
                .ok_or_else(|| Error::Config(format!("no eligible speaker for blend {}", spec.name)))?,
        })
    } else {
        None
    };
    let mut used: BTreeSet<String> = BTreeSet::new();
    let mut out: Vec<Option<(String, usize)>> = vec![None; spec.slots.len()];
    for (i, slot) in spec.slots.iter().enumerate() {
        let spk = match &slot.speaker {
            SpeakerSlot::Target => target.clone().expect("target resolved"),
            SpeakerSlot::Named(s) => {
                if !counts.contains_key(s) {
                    return Err(Error::UnknownSpeaker(s.clone()));
                }
                s.clone()
            }
            SpeakerSlot::Any => continue,
        };
        if !used.insert(spk.clone()) {
            return Err(Error::Config(format!(
                "speaker {spk} appears twice in blend {}",
                spec.name
            )));
        }
        out[i] = Some((spk, spec.scaled_count(slot.count)));
    }
    let mut pool = eligible.into_iter().filter(|s| !used.contains(*s));
    for (i, slot) in spec.slots.iter().enumerate() {
        if slot.speaker == SpeakerSlot::Any {
            let spk = pool.next().ok_or_else(|| {
                Error::Config(format!(
                    "blend {} needs more eligible speakers than the corpus has",
                    spec.name
                ))
            })?;
            out[i] = Some((spk.clone(), spec.scaled_count(slot.count)));
        }
    }
    let resolved: Vec<(String, usize)> = out.into_iter().map(|s| s.expect("every slot filled")).collect();
    for (spk, n) in &resolved {
        let available = counts[spk];
        if available < *n {
            return Err(Error::InsufficientData {
                speaker: spk.clone(),
                available,
                requested: *n,
                shortfall: n - available,
            });
        }
    }
    Ok(resolved)
}

/// Seeded per-speaker selection without replacement followed by a per-speaker
/// 90/10 split. A function of (corpus contents, spec) only; record order in
/// the corpus does not matter.
pub fn build_blend(corpus: &CorpusManifest, spec: &BlendSpec) -> Result<Blend> {
    let resolved = resolve_speakers(corpus, spec)?;
    let mut by_speaker: BTreeMap<&str, Vec<&ManifestRecord>> = BTreeMap::new();
    for r in &corpus.records {
        by_speaker.entry(r.speaker_id.as_str()).or_default().push(r);
    }
    let mut train = Vec::new();
    let mut dev = Vec::new();
    let mut splits = Vec::new();
    for (spk, n) in &resolved {
        let mut pool = by_speaker[spk.as_str()].clone();
        pool.sort_by(|a, b| a.utterance_id.cmp(&b.utterance_id));
        let mut rng = ChaCha8Rng::seed_from_u64(speaker_seed(spec.seed, spk));
        let picked = sample(&mut rng, pool.len(), *n).into_vec();
        let (n_train, n_dev) = split_counts(*n);
        let mut d: Vec<ManifestRecord> = picked[..n_dev].iter().map(|&i| pool[i].clone()).collect();
        let mut t: Vec<ManifestRecord> = picked[n_dev..].iter().map(|&i| pool[i].clone()).collect();
        d.sort_by(|a, b| a.utterance_id.cmp(&b.utterance_id));
        t.sort_by(|a, b| a.utterance_id.cmp(&b.utterance_id));
        debug_assert_eq!(t.len(), n_train);
        splits.push(SpeakerSplit {
            speaker_id: spk.clone(),
            selected: *n,
            train: n_train,
            dev: n_dev,
        });
        train.extend(t);
        dev.extend(d);
    }
    let target = spec
        .slots
        .iter()
        .zip(&resolved)
        .find(|(s, _)| s.speaker == SpeakerSlot::Target)
        .map(|(_, (spk, _))| spk.clone());
    Ok(Blend {
        spec: spec.clone(),
        target,
        splits,
        train: CorpusManifest::new(train),
        dev: CorpusManifest::new(dev),
    })
}
