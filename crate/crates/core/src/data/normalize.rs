use crate::error::{Error, Result};
use crate::math::Tensor;

use super::dataset::{MultiViewDataset, Sample};

/// Standard deviations below this are treated as 1 so constant features pass through centred.
const MIN_STD: f64 = 1e-12;

/// Per-view, per-feature mean and standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<Vec<f64>>,
    pub std: Vec<Vec<f64>>,
}

impl Standardizer {
    /// Statistics pooled over every sample and time step of `ds`.
    pub fn fit(ds: &MultiViewDataset) -> Self {
        let count = (ds.len() * ds.seq_len()) as f64;
        let mut mean = Vec::with_capacity(ds.views());
        let mut std = Vec::with_capacity(ds.views());
        for (v, &d) in ds.dims().iter().enumerate() {
            let mut m = vec![0.0; d];
            for s in ds.samples() {
                for row in s.views[v].data().chunks_exact(d) {
                    for (a, x) in m.iter_mut().zip(row) {
                        *a += x;
                    }
                }
            }
            m.iter_mut().for_each(|a| *a /= count);
            let mut var = vec![0.0; d];
            for s in ds.samples() {
                for row in s.views[v].data().chunks_exact(d) {
                    for ((a, x), mu) in var.iter_mut().zip(row).zip(&m) {
                        *a += (x - mu) * (x - mu);
                    }
                }
            }
            std.push(
                var.iter()
                    .map(|a| (a / count).sqrt())
                    .map(|s| if s < MIN_STD { 1.0 } else { s })
                    .collect(),
            );
            mean.push(m);
        }
        Self { mean, std }
    }

    /// Identity transform for the given widths.
    pub fn identity(dims: &[usize]) -> Self {
        Self {
            mean: dims.iter().map(|&d| vec![0.0; d]).collect(),
            std: dims.iter().map(|&d| vec![1.0; d]).collect(),
        }
    }

    pub fn dims(&self) -> Vec<usize> {
        self.mean.iter().map(Vec::len).collect()
    }

    pub fn apply_view(&self, v: usize, x: &Tensor) -> Tensor {
        let (m, s) = (&self.mean[v], &self.std[v]);
        let d = m.len();
        let data = x.data().iter().enumerate().map(|(i, &val)| (val - m[i % d]) / s[i % d]).collect();
        Tensor::new(x.shape().to_vec(), data).expect("same shape")
    }

    pub fn apply(&self, ds: &MultiViewDataset) -> Result<MultiViewDataset> {
        if self.dims() != ds.dims() {
            return Err(Error::ShapeMismatch {
                op: "Standardizer::apply",
                expected: self.dims(),
                got: ds.dims().to_vec(),
            });
        }
        let samples = ds
            .samples()
            .iter()
            .map(|s| Sample {
                views: s.views.iter().enumerate().map(|(v, x)| self.apply_view(v, x)).collect(),
                label: s.label,
            })
            .collect();
        MultiViewDataset::new(ds.classes(), ds.seq_len(), ds.dims().to_vec(), samples)
    }
}
