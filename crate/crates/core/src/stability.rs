//! Attention-based detection of skipped phones, repeated spans, stuck
//! decoding and non-termination, plus stability-rate reports.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::acoustic::SynthesisRecord;
use crate::error::{Error, Result};
use crate::nn::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentPath {
    pub positions: Vec<usize>,
    pub confidence: Vec<f64>,
}

impl AlignmentPath {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// Row-wise argmax; ties go to the smaller index.
pub fn extract_path(attention: &Tensor) -> Result<AlignmentPath> {
    if attention.rows() == 0 || attention.cols() == 0 {
        return Err(Error::EmptyAttention);
    }
    let positions: Vec<usize> = (0..attention.rows()).map(|r| attention.argmax_row(r)).collect();
    let confidence = positions
        .iter()
        .enumerate()
        .map(|(r, &c)| attention.get(r, c))
        .collect();
    Ok(AlignmentPath { positions, confidence })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FindingKind {
    Skip,
    Repeat,
    Stuck,
    NonTermination,
}

impl FindingKind {
    pub const ALL: [FindingKind; 4] = [Self::Skip, Self::Repeat, Self::Stuck, Self::NonTermination];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Skip => "skip",
            Self::Repeat => "repeat",
            Self::Stuck => "stuck",
            Self::NonTermination => "non_termination",
        }
    }
}

impl fmt::Display for FindingKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// `start_block..=end_block` is the affected decoder span. `position` is
/// the encoder position involved; `magnitude` is in positions for skips and
/// repeats and in blocks for stuck dwells and non-termination.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finding {
    pub kind: FindingKind,
    pub start_block: usize,
    pub end_block: usize,
    pub position: usize,
    pub magnitude: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityConfig {
    pub skip_threshold: usize,
    pub regression_tolerance: usize,
    pub dwell_threshold: usize,
}

impl Default for StabilityConfig {
    fn default() -> Self {
        Self {
            skip_threshold: 4,
            regression_tolerance: 2,
            dwell_threshold: 20,
        }
    }
}

/// One finding per forward jump larger than `threshold` between
/// consecutive blocks, located at the landing block.
pub fn detect_skip(path: &AlignmentPath, threshold: usize) -> Vec<Finding> {
    path.positions
        .windows(2)
        .enumerate()
        .filter(|(_, w)| w[1] > w[0] + threshold)
        .map(|(i, w)| Finding {
            kind: FindingKind::Skip,
            start_block: i + 1,
            end_block: i + 1,
            position: w[1],
            magnitude: w[1] - w[0],
        })
        .collect()
}

/// A regression of at least `tolerance` positions below the furthest
/// position reached so far, followed by forward movement over the
/// regressed span. The finding covers the regression block through the
/// block that regains the earlier peak (or the last forward block).
pub fn detect_repeat(path: &AlignmentPath, tolerance: usize) -> Vec<Finding> {
    let p = &path.positions;
    let mut findings = Vec::new();
    let Some(&first) = p.first() else {
        return findings;
    };
    let mut peak = first;
    let mut i = 1;
    while i < p.len() {
        if p[i] + tolerance <= peak {
            let start = i;
            let mut j = i + 1;
            let mut last_advance = None;
            while j < p.len() && p[j] < peak {
                if p[j] > p[j - 1] {
                    last_advance = Some(j);
                }
                j += 1;
            }
            let end = if j < p.len() { Some(j) } else { last_advance };
            if let Some(end) = end {
                findings.push(Finding {
                    kind: FindingKind::Repeat,
                    start_block: start,
                    end_block: end,
                    position: p[start],
                    magnitude: peak - p[start],
                });
                i = end + 1;
                if end < p.len() {
                    peak = peak.max(p[end]);
                }
                continue;
            }
            break;
        }
        peak = peak.max(p[i]);
        i += 1;
    }
    findings
}

/// Dwells longer than `dwell_threshold` blocks on one position, plus a
/// non-termination finding when the decoder hit its cap.
pub fn detect_stuck(
    path: &AlignmentPath,
    stop_trajectory: &[f64],
    terminated: bool,
    dwell_threshold: usize,
) -> Vec<Finding> {
    let p = &path.positions;
    let mut findings = Vec::new();
    let mut start = 0;
    for i in 1..=p.len() {
        if i == p.len() || p[i] != p[start] {
            let dwell = i - start;
            if dwell > dwell_threshold {
                findings.push(Finding {
                    kind: FindingKind::Stuck,
                    start_block: start,
                    end_block: i - 1,
                    position: p[start],
                    magnitude: dwell,
                });
            }
            start = i;
        }
    }
    if !terminated {
        let blocks = p.len().max(stop_trajectory.len());
        findings.push(Finding {
            kind: FindingKind::NonTermination,
            start_block: blocks.saturating_sub(1),
            end_block: blocks.saturating_sub(1),
            position: p.last().copied().unwrap_or(0),
            magnitude: blocks,
        });
    }
    findings
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityVerdict {
    pub utterance_id: String,
    pub speaker_id: String,
    pub stable: bool,
    pub findings: Vec<Finding>,
}

impl StabilityVerdict {
    pub fn has(&self, kind: FindingKind) -> bool {
        self.findings.iter().any(|f| f.kind == kind)
    }
}

pub fn classify_attention(
    utterance_id: &str,
    speaker_id: &str,
    attention: &Tensor,
    stop_trajectory: &[f64],
    terminated: bool,
    config: &StabilityConfig,
) -> Result<StabilityVerdict> {
    let path = extract_path(attention)?;
    let mut findings = detect_skip(&path, config.skip_threshold);
    findings.extend(detect_repeat(&path, config.regression_tolerance));
    findings.extend(detect_stuck(&path, stop_trajectory, terminated, config.dwell_threshold));
    findings.sort_by_key(|f| (f.start_block, f.kind));
    Ok(StabilityVerdict {
        utterance_id: utterance_id.into(),
        speaker_id: speaker_id.into(),
        stable: findings.is_empty(),
        findings,
    })
}

pub fn classify(record: &SynthesisRecord, config: &StabilityConfig) -> Result<StabilityVerdict> {
    classify_attention(
        &record.utterance_id,
        &record.speaker_id,
        &record.attention,
        &record.stop_trajectory,
        record.terminated,
        config,
    )
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StabilityCounts {
    pub stable: usize,
    pub total: usize,
}

impl StabilityCounts {
    pub fn percentage(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            100.0 * self.stable as f64 / self.total as f64
        }
    }

    /// One decimal place, as printed in stability tables.
    pub fn formatted(&self) -> String {
        format!("{:.1}", self.percentage())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub model: String,
    pub per_speaker: BTreeMap<String, StabilityCounts>,
    pub overall: StabilityCounts,
    pub findings_by_kind: BTreeMap<FindingKind, usize>,
    pub verdicts: Vec<StabilityVerdict>,
}

/// Verdict order does not affect the result.
pub fn stability_rate(model: &str, verdicts: &[StabilityVerdict]) -> Result<StabilityReport> {
    if verdicts.is_empty() {
        return Err(Error::NoVerdicts);
    }
    let mut per_speaker: BTreeMap<String, StabilityCounts> = BTreeMap::new();
    let mut overall = StabilityCounts::default();
    let mut findings_by_kind: BTreeMap<FindingKind, usize> = BTreeMap::new();
    for v in verdicts {
        let c = per_speaker.entry(v.speaker_id.clone()).or_default();
        c.total += 1;
        overall.total += 1;
        if v.stable {
            c.stable += 1;
            overall.stable += 1;
        }
        for f in &v.findings {
            *findings_by_kind.entry(f.kind).or_default() += 1;
        }
    }
    let mut verdicts = verdicts.to_vec();
    verdicts.sort_by(|a, b| (&a.speaker_id, &a.utterance_id).cmp(&(&b.speaker_id, &b.utterance_id)));
    Ok(StabilityReport {
        model: model.into(),
        per_speaker,
        overall,
        findings_by_kind,
        verdicts,
    })
}

impl StabilityReport {
    /// Stability-table layout: one row per model with the overall percentage,
    /// then per-speaker counts.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("{:<12} {:>8}\n", "model", "% stable"));
        s.push_str(&format!("{:<12} {:>8}\n", self.model, self.overall.formatted()));
        s.push('\n');
        s.push_str(&format!(
            "{:<12} {:>7} {:>7} {:>8}\n",
            "speaker", "stable", "total", "% stable"
        ));
        for (spk, c) in &self.per_speaker {
            s.push_str(&format!(
                "{:<12} {:>7} {:>7} {:>8}\n",
                spk,
                c.stable,
                c.total,
                c.formatted()
            ));
        }
        s.push_str(&format!(
            "{:<12} {:>7} {:>7} {:>8}\n",
            "all",
            self.overall.stable,
            self.overall.total,
            self.overall.formatted()
        ));
        if !self.findings_by_kind.is_empty() {
            s.push('\n');
            for kind in FindingKind::ALL {
                if let Some(n) = self.findings_by_kind.get(&kind) {
                    s.push_str(&format!("{kind}: {n}\n"));
                }
            }
        }
        s
    }

    /// One line per verdict: utterance, speaker, stable flag, findings.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("utterance_id\tspeaker_id\tstable\tfindings\n");
        for v in &self.verdicts {
            let f: Vec<String> = v
                .findings
                .iter()
                .map(|f| format!("{}@{}-{}:{}", f.kind, f.start_block, f.end_block, f.magnitude))
                .collect();
            s.push_str(&format!(
                "{}\t{}\t{}\t{}\n",
                v.utterance_id,
                v.speaker_id,
                v.stable,
                f.join(",")
            ));
        }
        s
    }
}

/// Labeled attention matrices for calibrating the detectors.
pub mod suite {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::FindingKind;
    use crate::nn::Tensor;

    #[derive(Debug, Clone)]
    pub struct LabeledCase {
        pub attention: Tensor,
        pub stop_trajectory: Vec<f64>,
        pub terminated: bool,
        pub planted: Vec<FindingKind>,
    }

    /// Clean path: advances 0, 1 or 2 positions per block (mostly 1), with
    /// occasional one-position jitter back.
    fn clean_path(rng: &mut ChaCha8Rng, encoder_len: usize) -> Vec<usize> {
        let mut path = vec![0];
        let mut pos = 0usize;
        while pos + 1 < encoder_len {
            let r: f64 = rng.random();
            let step = if r < 0.25 {
                0
            } else if r < 0.9 {
                1
            } else {
                2
            };
            pos = (pos + step).min(encoder_len - 1);
            if rng.random::<f64>() < 0.05 && pos > 0 {
                path.push(pos - 1);
            }
            path.push(pos);
        }
        path
    }

    /// Soft attention rows peaked at each path position.
    fn render(rng: &mut ChaCha8Rng, path: &[usize], encoder_len: usize) -> Tensor {
        let mut t = Tensor::zeros(path.len(), encoder_len);
        for (r, &p) in path.iter().enumerate() {
            let width = rng.random_range(0.6..1.2);
            let row = t.row_mut(r);
            for (c, v) in row.iter_mut().enumerate() {
                let d = (c as f64 - p as f64) / width;
                *v = (-0.5 * d * d).exp() * rng.random_range(0.9..1.0);
            }
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|v| *v /= s);
        }
        t
    }

    fn stop_for(blocks: usize, terminated: bool) -> Vec<f64> {
        (0..blocks)
            .map(|b| if terminated && b + 1 == blocks { 0.9 } else { 0.05 })
            .collect()
    }

    /// `per_kind` cases of each planted failure plus `clean` controls.
    pub fn generate(seed: u64, per_kind: usize, clean: usize) -> Vec<LabeledCase> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cases = Vec::new();
        let kinds = [
            FindingKind::Skip,
            FindingKind::Repeat,
            FindingKind::Stuck,
            FindingKind::NonTermination,
        ];
        for kind in kinds {
            for _ in 0..per_kind {
                let n = rng.random_range(25..60);
                let mut path = clean_path(&mut rng, n);
                let mut terminated = true;
                match kind {
                    FindingKind::Skip => {
                        let jump = rng.random_range(6..12);
                        let limit = path.iter().position(|&p| p + jump + 2 >= n).unwrap_or(path.len());
                        let at = rng.random_range(1..limit.max(2));
                        let target = path[at] + jump;
                        let resume = path.iter().position(|&p| p >= target).unwrap_or(path.len() - 1);
                        let tail = path.split_off(resume);
                        path.truncate(at + 1);
                        path.extend(tail);
                    }
                    FindingKind::Repeat => {
                        let at = rng.random_range(path.len() / 3..path.len() - 2);
                        let back = rng.random_range(3..8).min(path[at]);
                        let start = path[at] - back;
                        let replay: Vec<usize> = (start..path[at]).collect();
                        let tail = path.split_off(at);
                        path.extend(replay);
                        path.extend(tail);
                    }
                    FindingKind::Stuck => {
                        let at = rng.random_range(1..path.len() - 1);
                        let dwell = rng.random_range(25..45);
                        let p = path[at];
                        let tail = path.split_off(at);
                        path.extend(std::iter::repeat_n(p, dwell));
                        path.extend(tail);
                    }
                    FindingKind::NonTermination => {
                        terminated = false;
                        let last = *path.last().expect("non-empty");
                        let extra = rng.random_range(2..15);
                        path.extend((0..extra).map(|i| last.saturating_sub(i % 2)));
                    }
                }
                let attention = render(&mut rng, &path, n);
                cases.push(LabeledCase {
                    stop_trajectory: stop_for(path.len(), terminated),
                    attention,
                    terminated,
                    planted: vec![kind],
                });
            }
        }
        for _ in 0..clean {
            let n = rng.random_range(25..60);
            let path = clean_path(&mut rng, n);
            let attention = render(&mut rng, &path, n);
            cases.push(LabeledCase {
                stop_trajectory: stop_for(path.len(), true),
                attention,
                terminated: true,
                planted: Vec::new(),
            });
        }
        cases
    }
}
