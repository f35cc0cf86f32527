//! Alternating training of the view encoders and fusion heads, and checkpoints.

pub mod checkpoint;
pub mod config;
pub mod trainer;

pub use checkpoint::{checkpoint_from_bytes, checkpoint_to_bytes, load_checkpoint, save_checkpoint};
pub use config::TrainConfig;
pub use trainer::{score, train_loop, train_loop_with, EvalRecord, Model, Predictions, StepLosses, TrainOutcome, Trainer};
