//! Fixtures shared by the benchmarks.

use c2af_core::data::{synth_generate, MultiViewDataset, SynthConfig};
use c2af_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::matrix(rows, cols, data).expect("sized")
}

/// A random probability vector over `k` classes.
pub fn random_probs(k: usize, rng: &mut impl Rng) -> Vec<f64> {
    let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.01..1.0)).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / total).collect()
}

/// The acceptance benchmark's shape at a size that builds instantly.
pub fn small_benchmark(samples: usize) -> MultiViewDataset {
    synth_generate(&SynthConfig {
        samples,
        ..SynthConfig::benchmark(1.0, 0)
    })
    .expect("valid config")
    .dataset
}
