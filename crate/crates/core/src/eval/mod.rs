//! Accuracy metrics, the keyword score, and the ablation runner with its
//! CSV, text and SVG reports.

mod ablation;
mod metrics;
mod report;

pub use ablation::{evaluate_keywords, run_ablation, AblationConfig, KeywordEval};
pub use metrics::{keyword_score, retrieval_accuracy, topk_accuracy};
pub use report::{
    CellOutcome, CellResult, MetricsReport, OrderingCheck, PretrainOutcome, PretrainRow, Stat, REFERENCE_PRETRAIN,
    REFERENCE_SCORES,
};
