//! Measurement pipeline: update classification, length deltas,
//! incorporation judging, feedback clustering, and the statistics report.

pub mod cluster;
pub mod distance;
pub mod incorporation;
pub mod report;
pub mod stats;
pub mod update;

pub use cluster::{cluster_feedback, ClusterConfig, ClusterError, ClusterOutcome};
pub use distance::{levenshtein, section_tokens, section_word_distance, word_tokens};
pub use incorporation::{
    judge_incorporation, parse_judge_output, IncorporationError, IncorporationVerdict,
};
pub use report::render_report_table;
pub use stats::{
    compute_stats, read_verdicts_jsonl, stars, two_proportion_z_test, welch_t_test,
    write_verdicts_jsonl, MeanStat, Rate, StatsConfig, StatsReport, TestOutcome, VerdictRecord,
};
pub use update::{classify_update, word_delta, UpdateBasis, UpdateClass, UpdateClassification};
