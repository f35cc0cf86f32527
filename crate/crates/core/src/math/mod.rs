//! Dense tensors, kernels with their gradient rules, Adam, and the
//! finite-difference gradient oracle.

pub mod adam;
pub mod gradcheck;
pub mod init;
pub mod linear;
pub mod ops;
pub mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradcheck::{finite_diff_check, GradCheckOptions, GradCheckReport};
pub use linear::Linear;
pub use ops::{argmax, cross_entropy, softmax, Activation};
pub use tensor::{Param, ParamSet, Tensor};
