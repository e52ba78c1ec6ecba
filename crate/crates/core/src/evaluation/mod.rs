//! Balanced accuracy, the exact signed-rank test and result tables.

mod metrics;
mod report;
mod wilcoxon;

pub use metrics::{balanced_accuracy, BalancedAccuracy, ConfusionMatrix};
pub use report::{aggregate, compare_models, mean, std_dev, Comparison, MetricsRecord, Report, StdKind};
pub use wilcoxon::{average_ranks, wilcoxon, Alternative, ComparisonResult, MAX_EXACT_N};
