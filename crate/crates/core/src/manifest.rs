//! Line-delimited corpus manifests.
//!
//! Each non-empty line is `utterance_id TAB speaker_id TAB audio_path TAB text`,
//! optionally with a gender column after the speaker:
//! `utterance_id TAB speaker_id TAB gender TAB audio_path TAB text`.
//! Lines starting with `#` are comments.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Female,
    Male,
    Unknown,
}

impl FromStr for Gender {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "f" | "female" => Ok(Self::Female),
            "m" | "male" => Ok(Self::Male),
            "u" | "x" | "unknown" | "child" | "other" => Ok(Self::Unknown),
            other => Err(format!("unknown gender {other:?}")),
        }
    }
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Female => "female",
            Self::Male => "male",
            Self::Unknown => "unknown",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub utterance_id: String,
    pub speaker_id: String,
    pub gender: Gender,
    pub audio_path: PathBuf,
    pub text: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub records: Vec<ManifestRecord>,
}

impl CorpusManifest {
    pub fn new(records: Vec<ManifestRecord>) -> Self {
        Self { records }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut records = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let err = |message: String| Error::Manifest { line: i + 1, message };
            let (utt, spk, gender, audio, text) = match fields.as_slice() {
                [u, s, a, t] => (*u, *s, Gender::Unknown, *a, *t),
                [u, s, g, a, t] => (*u, *s, g.parse().map_err(err)?, *a, *t),
                _ => {
                    return Err(err(format!(
                        "expected 4 or 5 tab-separated fields, found {}",
                        fields.len()
                    )));
                }
            };
            if utt.is_empty() || spk.is_empty() {
                return Err(err("empty utterance or speaker id".into()));
            }
            records.push(ManifestRecord {
                utterance_id: utt.into(),
                speaker_id: spk.into(),
                gender,
                audio_path: PathBuf::from(audio),
                text: text.into(),
            });
        }
        Ok(Self { records })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Always writes the five-column form.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for r in &self.records {
            s.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                r.utterance_id,
                r.speaker_id,
                r.gender,
                r.audio_path.display(),
                r.text
            ));
        }
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn speaker_counts(&self) -> BTreeMap<String, usize> {
        let mut m = BTreeMap::new();
        for r in &self.records {
            *m.entry(r.speaker_id.clone()).or_insert(0) += 1;
        }
        m
    }

    /// Gender recorded for each speaker (first record wins).
    pub fn speaker_genders(&self) -> BTreeMap<String, Gender> {
        let mut m = BTreeMap::new();
        for r in &self.records {
            m.entry(r.speaker_id.clone()).or_insert(r.gender);
        }
        m
    }

    pub fn speakers(&self) -> Vec<String> {
        self.speaker_counts().into_keys().collect()
    }

    /// Resolves relative audio paths against `base`.
    pub fn audio_path(&self, record: &ManifestRecord, base: &Path) -> PathBuf {
        if record.audio_path.is_absolute() {
            record.audio_path.clone()
        } else {
            base.join(&record.audio_path)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ManifestIssue {
    DuplicateId { utterance_id: String, count: usize },
    MissingAudio { utterance_id: String, path: PathBuf },
    EmptyText { utterance_id: String },
    InconsistentGender { speaker_id: String },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub records: usize,
    pub speakers: BTreeMap<String, usize>,
    pub issues: Vec<ManifestIssue>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.issues.is_empty()
    }
}

/// Checks duplicate ids, empty text, per-speaker gender consistency and,
/// when `audio_base` is given, audio file existence.
pub fn validate_manifest(manifest: &CorpusManifest, audio_base: Option<&Path>) -> ValidationReport {
    let mut issues = Vec::new();
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for r in &manifest.records {
        *counts.entry(r.utterance_id.as_str()).or_insert(0) += 1;
    }
    for (id, &n) in &counts {
        if n > 1 {
            issues.push(ManifestIssue::DuplicateId {
                utterance_id: id.to_string(),
                count: n,
            });
        }
    }
    let mut genders: BTreeMap<&str, Gender> = BTreeMap::new();
    let mut flagged: HashSet<&str> = HashSet::new();
    for r in &manifest.records {
        if r.text.trim().is_empty() {
            issues.push(ManifestIssue::EmptyText {
                utterance_id: r.utterance_id.clone(),
            });
        }
        if let Some(base) = audio_base {
            let path = manifest.audio_path(r, base);
            if !path.is_file() {
                issues.push(ManifestIssue::MissingAudio {
                    utterance_id: r.utterance_id.clone(),
                    path,
                });
            }
        }
        let g = *genders.entry(r.speaker_id.as_str()).or_insert(r.gender);
        if g != r.gender && flagged.insert(r.speaker_id.as_str()) {
            issues.push(ManifestIssue::InconsistentGender {
                speaker_id: r.speaker_id.clone(),
            });
        }
    }
    ValidationReport {
        records: manifest.len(),
        speakers: manifest.speaker_counts(),
        issues,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "# corpus\na1\tspkA\tf\twav/a1.wav\tHello there.\na2\tspkA\tf\twav/a2.wav\tGood morning.\nb1\tspkB\twav/b1.wav\tHi.\n";

    #[test]
    fn parses_four_and_five_columns() {
        let m = CorpusManifest::parse(SAMPLE).unwrap();
        assert_eq!(m.len(), 3);
        assert_eq!(m.records[0].gender, Gender::Female);
        assert_eq!(m.records[2].gender, Gender::Unknown);
        assert_eq!(m.speaker_counts()["spkA"], 2);
        let again = CorpusManifest::parse(&m.to_text()).unwrap();
        assert_eq!(again, m);
    }

    #[test]
    fn rejects_malformed_lines() {
        let err = CorpusManifest::parse("a\tb\n").unwrap_err();
        assert!(matches!(err, Error::Manifest { line: 1, .. }));
        let err = CorpusManifest::parse("a\tb\tq\tx.wav\tt\n").unwrap_err();
        assert!(matches!(err, Error::Manifest { line: 1, .. }));
    }

    #[test]
    fn validation_findings() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir(dir.path().join("wav")).unwrap();
        for n in ["a1", "a2", "b1"] {
            std::fs::write(dir.path().join(format!("wav/{n}.wav")), b"").unwrap();
        }
        let m = CorpusManifest::parse(SAMPLE).unwrap();
        assert!(validate_manifest(&m, Some(dir.path())).is_clean());

        let mut dup = m.clone();
        dup.records.push(m.records[0].clone());
        let r = validate_manifest(&dup, Some(dir.path()));
        assert_eq!(
            r.issues,
            vec![ManifestIssue::DuplicateId {
                utterance_id: "a1".into(),
                count: 2
            }]
        );

        let mut missing = m.clone();
        missing.records[1].audio_path = PathBuf::from("wav/nope.wav");
        missing.records[2].text = " ".into();
        let r = validate_manifest(&missing, Some(dir.path()));
        assert_eq!(r.issues.len(), 2);
        assert!(r.issues.contains(&ManifestIssue::MissingAudio {
            utterance_id: "a2".into(),
            path: dir.path().join("wav/nope.wav"),
        }));
    }
}
