use crate::error::{Error, Result};
use crate::math::ops::{softmax, softmax_backward};
use crate::math::{Param, ParamSet, Tensor};

/// One logit per time step; pooling weights are `softmax(logits)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub logits: Param,
}

impl AttentionParams {
    /// Uniform attention over `steps` time steps.
    pub fn new(prefix: &str, steps: usize) -> Self {
        Self {
            logits: Param::new(format!("{prefix}.logits"), Tensor::zeros(&[steps])),
        }
    }

    pub fn steps(&self) -> usize {
        self.logits.len()
    }

    pub fn weights(&self) -> Vec<f64> {
        softmax(self.logits.value.data())
    }
}

impl ParamSet for AttentionParams {
    fn params(&self) -> Vec<&Param> {
        vec![&self.logits]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.logits]
    }
}

/// `Σ_t ω_t h_t` over the rows of `hseq` (`T × d`).
pub fn attention_pool(hseq: &Tensor, a: &AttentionParams) -> Result<Tensor> {
    let (steps, d) = hseq.dims2()?;
    if steps != a.steps() {
        return Err(Error::ShapeMismatch {
            op: "attention_pool",
            expected: vec![a.steps(), d],
            got: vec![steps, d],
        });
    }
    let out = Tensor::vector(pool(hseq.data(), d, &a.weights()));
    out.ensure_finite("attention_pool")?;
    Ok(out)
}

pub(crate) fn pool(hseq: &[f64], d: usize, weights: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; d];
    for (row, &w) in hseq.chunks_exact(d).zip(weights) {
        for (o, &h) in out.iter_mut().zip(row) {
            *o += w * h;
        }
    }
    out
}

/// Returns `d hseq` and accumulates `d logits` into `dlogits`.
pub(crate) fn pool_backward(hseq: &[f64], d: usize, weights: &[f64], dout: &[f64], dlogits: &mut [f64]) -> Vec<f64> {
    let mut dh = vec![0.0; hseq.len()];
    let mut dw = vec![0.0; weights.len()];
    for (t, row) in hseq.chunks_exact(d).enumerate() {
        dw[t] = row.iter().zip(dout).map(|(a, b)| a * b).sum();
        for (g, &go) in dh[t * d..(t + 1) * d].iter_mut().zip(dout) {
            *g = weights[t] * go;
        }
    }
    for (acc, v) in dlogits.iter_mut().zip(softmax_backward(weights, &dw)) {
        *acc += v;
    }
    dh
}
