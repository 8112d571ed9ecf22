//! Score aggregation (medians, within-set average ranks, boxplot
//! statistics) and pairwise significance with Holm correction.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::panels::{TestMode, ANCHOR};
use super::stats::{
    holm_adjusted, holm_bonferroni, midranks, paired_t_test, wilcoxon_signed_rank, TTestResult, WilcoxonResult,
};
use crate::error::{Error, Result};

/// One rated slot. A rating set is all records sharing `(panel_id, rater_id)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub panel_id: String,
    pub rater_id: String,
    pub slot: usize,
    pub system: String,
    pub score: f64,
}

pub fn read_scores(r: impl Read) -> Result<Vec<ScoreRecord>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    let mut out = Vec::new();
    for (i, rec) in reader.deserialize::<ScoreRecord>().enumerate() {
        let rec = rec?;
        if !(0.0..=100.0).contains(&rec.score) {
            return Err(Error::Manifest {
                line: i + 2,
                message: format!("score {} outside [0, 100]", rec.score),
            });
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn load_scores(path: &Path) -> Result<Vec<ScoreRecord>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_scores(f)
}

pub fn write_scores(w: impl Write, records: &[ScoreRecord]) -> Result<()> {
    let mut writer = csv::Writer::from_writer(w);
    for r in records {
        writer.serialize(r)?;
    }
    writer.flush().map_err(|e| Error::io("<scores>", e))?;
    Ok(())
}

type SetKey = (String, String);

/// Scores indexed by rating set, then system. Every set holds every system once.
#[derive(Debug, Clone, PartialEq)]
pub struct RatingMatrix {
    pub systems: Vec<String>,
    pub sets: BTreeMap<SetKey, BTreeMap<String, f64>>,
}

impl RatingMatrix {
    /// `order` fixes the system order; unlisted systems follow with the
    /// anchor first and the rest sorted by name.
    pub fn build(records: &[ScoreRecord], order: &[String]) -> Result<Self> {
        let mut systems: Vec<String> = order.to_vec();
        let listed: BTreeSet<String> = systems.iter().cloned().collect();
        let rest: BTreeSet<&String> = records
            .iter()
            .map(|r| &r.system)
            .filter(|s| !listed.contains(*s))
            .collect();
        if rest.iter().any(|s| *s == ANCHOR) {
            systems.push(ANCHOR.to_string());
        }
        systems.extend(rest.into_iter().filter(|s| *s != ANCHOR).cloned());
        let mut sets: BTreeMap<SetKey, BTreeMap<String, f64>> = BTreeMap::new();
        let mut problems = Vec::new();
        for r in records {
            let cell = sets.entry((r.panel_id.clone(), r.rater_id.clone())).or_default();
            if cell.insert(r.system.clone(), r.score).is_some() {
                problems.push(format!(
                    "panel {} rater {} system {} rated twice",
                    r.panel_id, r.rater_id, r.system
                ));
            }
        }
        for ((panel, rater), cell) in &sets {
            for s in &systems {
                if !cell.contains_key(s) {
                    problems.push(format!("panel {panel} rater {rater} system {s} missing"));
                }
            }
        }
        if !problems.is_empty() {
            return Err(Error::UnbalancedRatings(problems));
        }
        if sets.is_empty() {
            return Err(Error::Stats("no ratings".into()));
        }
        Ok(Self { systems, sets })
    }

    pub fn scores(&self, system: &str) -> Vec<f64> {
        self.sets.values().map(|c| c[system]).collect()
    }

    /// Within-set ranks (1 = highest score, ties share midranks), summed over sets.
    pub fn rank_sums(&self) -> BTreeMap<String, f64> {
        let mut sums: BTreeMap<String, f64> = self.systems.iter().map(|s| (s.clone(), 0.0)).collect();
        for cell in self.sets.values() {
            let neg: Vec<f64> = self.systems.iter().map(|s| -cell[s]).collect();
            for (s, r) in self.systems.iter().zip(midranks(&neg)) {
                *sums.get_mut(s).expect("known system") += r;
            }
        }
        sums
    }
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    /// Most extreme data within 1.5 IQR of the box.
    pub whisker_low: f64,
    pub whisker_high: f64,
    pub outliers: Vec<f64>,
}

pub fn box_stats(values: &[f64]) -> BoxStats {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let q1 = quantile(&v, 0.25);
    let median = quantile(&v, 0.5);
    let q3 = quantile(&v, 0.75);
    let iqr = q3 - q1;
    let (lo, hi) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
    let inside: Vec<f64> = v.iter().copied().filter(|x| *x >= lo && *x <= hi).collect();
    BoxStats {
        q1,
        median,
        q3,
        whisker_low: inside.first().copied().unwrap_or(q1),
        whisker_high: inside.last().copied().unwrap_or(q3),
        outliers: v.iter().copied().filter(|x| *x < lo || *x > hi).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemSummary {
    pub system: String,
    pub n: usize,
    pub median: f64,
    pub mean: f64,
    pub rank_sum: f64,
    pub average_rank: f64,
    pub boxplot: BoxStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub sets: usize,
    pub systems: Vec<SystemSummary>,
}

pub fn aggregate(matrix: &RatingMatrix) -> Aggregate {
    let sums = matrix.rank_sums();
    let sets = matrix.sets.len();
    let systems = matrix
        .systems
        .iter()
        .map(|s| {
            let scores = matrix.scores(s);
            let boxplot = box_stats(&scores);
            SystemSummary {
                system: s.clone(),
                n: scores.len(),
                median: boxplot.median,
                mean: scores.iter().sum::<f64>() / scores.len() as f64,
                rank_sum: sums[s],
                average_rank: sums[s] / sets as f64,
                boxplot,
            }
        })
        .collect();
    Aggregate { sets, systems }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignificanceResult {
    pub system_a: String,
    pub system_b: String,
    pub wilcoxon: WilcoxonResult,
    pub t_test: TTestResult,
    pub wilcoxon_p_holm: f64,
    pub t_p_holm: f64,
    pub wilcoxon_significant: bool,
    pub t_significant: bool,
}

/// Every unordered pair, paired over rating sets (`a − b`). Holm runs
/// separately over the Wilcoxon family and the t-test family.
pub fn significance_matrix(matrix: &RatingMatrix, alpha: f64) -> Result<Vec<SignificanceResult>> {
    if matrix.systems.len() < 2 {
        return Err(Error::Stats("significance needs at least two systems".into()));
    }
    let mut raw = Vec::new();
    for (i, a) in matrix.systems.iter().enumerate() {
        for b in &matrix.systems[i + 1..] {
            let d: Vec<f64> = matrix.sets.values().map(|c| c[a] - c[b]).collect();
            raw.push((a.clone(), b.clone(), wilcoxon_signed_rank(&d)?, paired_t_test(&d)?));
        }
    }
    let wp: Vec<f64> = raw.iter().map(|r| r.2.p_value).collect();
    let tp: Vec<f64> = raw.iter().map(|r| r.3.p_value).collect();
    let (wr, tr) = (holm_bonferroni(&wp, alpha), holm_bonferroni(&tp, alpha));
    let (wa, ta) = (holm_adjusted(&wp), holm_adjusted(&tp));
    Ok(raw
        .into_iter()
        .enumerate()
        .map(|(k, (a, b, w, t))| SignificanceResult {
            system_a: a,
            system_b: b,
            wilcoxon: w,
            t_test: t,
            wilcoxon_p_holm: wa[k],
            t_p_holm: ta[k],
            wilcoxon_significant: wr[k],
            t_significant: tr[k],
        })
        .collect())
}

/// Integer when whole, otherwise one decimal.
pub fn format_median(v: f64) -> String {
    if (v - v.round()).abs() < 1e-9 {
        format!("{}", v.round() as i64)
    } else {
        format!("{v:.1}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MushraReport {
    pub label: String,
    pub mode: TestMode,
    pub alpha: f64,
    pub aggregate: Aggregate,
    pub significance: Vec<SignificanceResult>,
}

/// With an empty `order`, systems are listed best average rank first.
pub fn analyze(
    records: &[ScoreRecord],
    order: &[String],
    label: &str,
    mode: TestMode,
    alpha: f64,
) -> Result<MushraReport> {
    let mut matrix = RatingMatrix::build(records, order)?;
    if order.is_empty() {
        let sums = matrix.rank_sums();
        matrix
            .systems
            .sort_by(|a, b| sums[a].total_cmp(&sums[b]).then_with(|| a.cmp(b)));
    }
    Ok(MushraReport {
        label: label.into(),
        mode,
        alpha,
        aggregate: aggregate(&matrix),
        significance: significance_matrix(&matrix, alpha)?,
    })
}

impl MushraReport {
    /// Table cell per system: `median (average rank)` for naturalness, mean for similarity.
    pub fn cells(&self) -> Vec<String> {
        self.aggregate
            .systems
            .iter()
            .map(|s| match self.mode {
                TestMode::Naturalness => format!("{} ({:.2})", format_median(s.median), s.average_rank),
                TestMode::Similarity => format!("{:.1}", s.mean),
            })
            .collect()
    }

    pub fn to_text(&self) -> String {
        let cells = self.cells();
        let label_w = self.label.len().max(8);
        let widths: Vec<usize> = self
            .aggregate
            .systems
            .iter()
            .zip(&cells)
            .map(|(s, c)| s.system.len().max(c.len()))
            .collect();
        let mut out = String::new();
        out.push_str(&format!("{:<label_w$}", ""));
        for (s, w) in self.aggregate.systems.iter().zip(&widths) {
            out.push_str(&format!("  {:>w$}", s.system));
        }
        out.push('\n');
        out.push_str(&format!("{:<label_w$}", self.label));
        for (c, w) in cells.iter().zip(&widths) {
            out.push_str(&format!("  {c:>w$}"));
        }
        out.push_str(&format!("\n\nrating sets: {}\n\n", self.aggregate.sets));
        out.push_str(&format!(
            "{:<28} {:>10} {:>10} {:>4} {:>10} {:>10} {:>4}\n",
            "pair", "wilcoxon p", "holm p", "sig", "t p", "holm p", "sig"
        ));
        for r in &self.significance {
            let mark = |b: bool| if b { "*" } else { "" };
            out.push_str(&format!(
                "{:<28} {:>10.4e} {:>10.4e} {:>4} {:>10.4e} {:>10.4e} {:>4}\n",
                format!("{} vs {}", r.system_a, r.system_b),
                r.wilcoxon.p_value,
                r.wilcoxon_p_holm,
                mark(r.wilcoxon_significant),
                r.t_test.p_value,
                r.t_p_holm,
                mark(r.t_significant)
            ));
        }
        out
    }

    /// Tab-separated boxplot statistics, one row per system.
    pub fn boxplot_tsv(&self) -> String {
        let mut out = String::from("system\tn\twhisker_low\tq1\tmedian\tq3\twhisker_high\tmean\toutliers\n");
        for s in &self.aggregate.systems {
            let b = &s.boxplot;
            let outliers: Vec<String> = b.outliers.iter().map(|x| x.to_string()).collect();
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
                s.system,
                s.n,
                b.whisker_low,
                b.q1,
                b.median,
                b.q3,
                b.whisker_high,
                s.mean,
                outliers.join(",")
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(panel: &str, rater: &str, system: &str, score: f64) -> ScoreRecord {
        ScoreRecord {
            panel_id: panel.into(),
            rater_id: rater.into(),
            slot: 0,
            system: system.into(),
            score,
        }
    }

    /// Three panels, one rater each, hand-ranked.
    fn three_panels() -> Vec<ScoreRecord> {
        vec![
            rec("p1", "r1", "recording", 90.0),
            rec("p1", "r1", "x", 60.0),
            rec("p1", "r1", "y", 70.0),
            rec("p2", "r1", "recording", 80.0),
            rec("p2", "r1", "x", 80.0),
            rec("p2", "r1", "y", 40.0),
            rec("p3", "r1", "recording", 50.0),
            rec("p3", "r1", "x", 70.0),
            rec("p3", "r1", "y", 60.0),
        ]
    }

    #[test]
    fn hand_computed_ranks_and_medians() {
        let m = RatingMatrix::build(&three_panels(), &[]).unwrap();
        let a = aggregate(&m);
        let by: BTreeMap<_, _> = a.systems.iter().map(|s| (s.system.as_str(), s)).collect();
        // p1: rec 1, y 2, x 3; p2: rec 1.5, x 1.5, y 3; p3: x 1, y 2, rec 3
        assert_eq!(by["recording"].rank_sum, 5.5);
        assert_eq!(by["x"].rank_sum, 5.5);
        assert_eq!(by["y"].rank_sum, 7.0);
        assert_eq!(by["recording"].median, 80.0);
        assert_eq!(by["y"].median, 60.0);
        assert_eq!(a.systems[0].system, "recording");
    }

    #[test]
    fn identical_scores_give_middle_rank() {
        let mut r = Vec::new();
        for p in 0..4 {
            for s in ["recording", "a", "b", "c"] {
                r.push(rec(&format!("p{p}"), "r", s, 50.0));
            }
        }
        let a = aggregate(&RatingMatrix::build(&r, &[]).unwrap());
        assert!(a.systems.iter().all(|s| s.average_rank == 2.5));
    }

    #[test]
    fn unbalanced_matrix_lists_missing_cells() {
        let mut r = three_panels();
        r.remove(4);
        match RatingMatrix::build(&r, &[]) {
            Err(Error::UnbalancedRatings(cells)) => {
                assert_eq!(cells, vec!["panel p2 rater r1 system x missing".to_string()]);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn one_clear_pair_one_identical_pair() {
        let mut r = Vec::new();
        for p in 0..12 {
            let panel = format!("p{p:02}");
            let base = 40.0 + p as f64;
            r.push(rec(&panel, "r", "recording", base + 40.0));
            r.push(rec(&panel, "r", "a", base));
        }
        let report = analyze(&r, &[], "t", TestMode::Naturalness, 0.05).unwrap();
        assert_eq!(report.significance.len(), 1);
        assert!(report.significance[0].wilcoxon_significant);

        let mut same = Vec::new();
        for p in 0..12 {
            let panel = format!("p{p:02}");
            let v = 30.0 + (p * 7 % 11) as f64;
            same.push(rec(&panel, "r", "recording", v + 45.0));
            same.push(rec(&panel, "r", "a", v));
            same.push(rec(&panel, "r", "b", v));
        }
        let report = analyze(&same, &[], "t", TestMode::Naturalness, 0.05).unwrap();
        let sig: Vec<bool> = report.significance.iter().map(|s| s.wilcoxon_significant).collect();
        assert_eq!(sig, vec![true, true, false]);
    }

    #[test]
    fn csv_round_trip_and_range_check() {
        let r = three_panels();
        let mut buf = Vec::new();
        write_scores(&mut buf, &r).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("panel_id,rater_id,slot,system,score\n"));
        assert_eq!(read_scores(text.as_bytes()).unwrap(), r);
        let bad = "panel_id,rater_id,slot,system,score\np,r,0,a,101\n";
        assert!(read_scores(bad.as_bytes()).is_err());
    }

    #[test]
    fn median_formatting() {
        assert_eq!(format_median(77.0), "77");
        assert_eq!(format_median(61.5), "61.5");
    }

    #[test]
    fn whiskers_use_one_and_a_half_iqr() {
        let b = box_stats(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 100.0]);
        assert_eq!((b.q1, b.median, b.q3), (3.0, 5.0, 7.0));
        assert_eq!((b.whisker_low, b.whisker_high), (1.0, 8.0));
        assert_eq!(b.outliers, vec![100.0]);
    }
}
