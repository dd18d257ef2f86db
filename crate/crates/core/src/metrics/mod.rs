//! Confusion matrices, one-vs-rest classification metrics, rank AUC and
//! report files.

mod auc;
mod confusion;
mod report;

pub use auc::{auc_macro_ovr, binary_neoplastic_metrics, rank_auc, AucReport, BinaryMetrics};
pub use confusion::{classification_metrics, normalize_confusion, ClassMetrics, ClassificationMetrics, ConfusionMatrix};
pub use report::{emit_report, format_table, summarize, MetricsReport, ReportFiles, Summary, TABLE_ROWS};
