//! Audit metrics and the configurable experiment sweeps.

mod experiment;
mod metrics;
mod sweep;

pub use experiment::{
    audit_users, run_experiment, run_prepared, train_shadows_cached, train_target, ExperimentConfig,
    ExperimentResult, ModelCache, ModelSpec, PreparedData,
};
pub use metrics::{auc, classification_metrics, AuditOutcome, ClassificationMetrics};
pub use sweep::{manifest_path, read_sweep_csv, run_sweep, run_sweep_to_csv, summarize, Axis, AxisValue, SweepRow, SweepSpec, SweepSummary};
