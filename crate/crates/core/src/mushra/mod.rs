//! MUSHRA listening tests: panel assembly, score aggregation and
//! significance testing.

pub mod analysis;
pub mod panels;
pub mod stats;

pub use analysis::{
    aggregate, analyze, box_stats, format_median, load_scores, read_scores, significance_matrix, write_scores,
    Aggregate, BoxStats, MushraReport, RatingMatrix, ScoreRecord, SignificanceResult, SystemSummary,
};
pub use panels::{assemble_panels, MushraPanel, PanelPlan, Stimulus, StimulusCatalog, TestMode, ANCHOR};
pub use stats::{
    holm_adjusted, holm_bonferroni, midranks, paired_t_test, wilcoxon_signed_rank, TTestResult, WilcoxonMethod,
    WilcoxonResult,
};
