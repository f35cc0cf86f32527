//! Multi-view time-series classification with correlative channel-aware fusion.
//!
//! Each view is encoded and classified on its own; the per-view class
//! probabilities are combined through intra- and inter-view correlation
//! matrices, 1×1 channel filters and a final softmax classifier.

pub mod data;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod math;
pub mod train;

pub use data::{load_container, save_container, synth_generate, ConfusionSpec, MultiViewDataset, Sample, SynthConfig};
pub use error::{Error, Result};
pub use eval::{
    ablation_suite, emit_report, evaluate_checkpoint, run_full_gradcheck, AblationMode, AblationReport, EvalReport,
    LateFusion, ReportFormat,
};
pub use fusion::FusionMode;
pub use math::{Param, ParamSet, Tensor};
pub use train::{load_checkpoint, save_checkpoint, train_loop, train_loop_with, EvalRecord, TrainConfig, TrainOutcome, Trainer};
