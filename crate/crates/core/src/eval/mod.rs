//! Scoring, subject-wise cross-validation and model analysis.

mod analysis;
mod cv;
mod metrics;

pub use analysis::{cell_trace, filter_activations, Branch, CellTrace, FilterActivationMap};
pub use cv::{run_cv, CvOptions, CvOutcome, FoldResult, Progress, SubjectPredictions};
pub use metrics::{
    accuracy, confusion, kappa, per_class_and_mf1, ClassMetrics, ConfusionMatrix, MetricsReport,
};
