//! Evaluation artifacts: PR curves, best F1, imbalance sweeps, temporal
//! decay and structure comparisons. The fraud class is the positive class
//! throughout.

mod experiments;
mod metrics;
mod report;

pub use experiments::{
    compare_structures, default_comparison, evaluate_holdout, imbalance_sweep, temporal_decay, time_split,
    CompareEntry, DecayPoint, EvalMetadata, EvalReport, RunResult, SweepCell, SweepReport,
};
pub use metrics::{best_f1, f1_score, pr_curve, BestF1, PrCurve, PrPoint};
pub use report::{report_path, write_csv, write_jsonl};
