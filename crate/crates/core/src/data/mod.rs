//! Datasets, the binary container, length alignment, standardization and the
//! synthetic benchmark generator.

pub mod align;
pub mod container;
pub mod dataset;
pub mod normalize;
pub mod synth;

pub use align::align_length;
pub use container::{from_bytes, load_container, save_container, to_bytes};
pub use dataset::{feature_concat, split_features, MultiViewDataset, Sample};
pub use normalize::Standardizer;
pub use synth::{
    nearest_signature_predict, oracle_accuracy, synth_generate, ConfusionSpec, SynthConfig, SynthDataset,
};
