pub mod metrics;
pub mod pr;
pub mod report;

pub use metrics::{
    binarize, confusion, confusion_at, confusion_labels, metrics, ConfusionCounts, Degeneracy,
    Metrics, DEFAULT_THRESHOLD,
};
pub use pr::{auc_pr, auc_pr_with, trapezoid_auc, PrAccumulator, PrPoint, ThresholdSweep};
pub use report::{scenario_report, MetricReport, ScenarioReport, METRIC_NAMES};
