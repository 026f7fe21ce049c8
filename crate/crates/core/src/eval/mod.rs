//! Thresholded decisions, micro/macro metrics, reports and the ablation
//! harness.

mod ablation;
mod metrics;
mod report;

pub use ablation::{run_ablation_suite, train_and_evaluate, AblationRow, AblationTable, RunOutcome};
pub use metrics::{compute_metrics, decide, evaluate, predict_all, CategoryMetrics, MetricsReport, Prf};
pub use report::{render_records, render_text, MACRO_CONVENTION};
