//! Metrics, late-fusion baselines, ablations, reports and the full-network
//! gradient check.

pub mod ablation;
pub mod baseline;
pub mod gradcheck;
pub mod metrics;
pub mod report;

pub use ablation::{ablation_run, ablation_suite, best_report, single_mode_config, AblationMode, AblationReport, ModeSummary};
pub use baseline::{average_fusion, max_fusion, LateFusion};
pub use gradcheck::{run_full_gradcheck, run_gradcheck, GradCheckSetup, GRADCHECK_TOL};
pub use metrics::{accuracy, confusion, confusion_accuracy, predictions, Confusion};
pub use report::{emit_report, evaluate_checkpoint, EvalReport, ReportFormat};
