use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::tensor::{Param, Tensor};
use crate::error::{Error, Result};

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub first: Tensor,
    pub second: Tensor,
}

/// Per-parameter moment estimates keyed by parameter name, plus a shared step count.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdamState {
    pub step: u64,
    pub moments: BTreeMap<String, Moments>,
}

impl AdamState {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Param>) -> Self {
        let moments = params
            .into_iter()
            .map(|p| {
                (
                    p.name.clone(),
                    Moments {
                        first: Tensor::zeros(p.value.shape()),
                        second: Tensor::zeros(p.value.shape()),
                    },
                )
            })
            .collect();
        Self { step: 0, moments }
    }
}

/// One bias-corrected Adam update over `params` using their populated gradients.
pub fn adam_step(params: &mut [&mut Param], state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    for p in params.iter() {
        let m = state
            .moments
            .get(&p.name)
            .ok_or_else(|| Error::UninitializedState(p.name.clone()))?;
        if m.first.shape() != p.value.shape() {
            return Err(Error::ShapeMismatch {
                op: "adam_step",
                expected: p.value.shape().to_vec(),
                got: m.first.shape().to_vec(),
            });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for p in params.iter_mut() {
        let m = state.moments.get_mut(&p.name).expect("checked above");
        let g = p.grad.data();
        let v = p.value.data_mut();
        let (m1, m2) = (m.first.data_mut(), m.second.data_mut());
        for i in 0..g.len() {
            m1[i] = cfg.beta1 * m1[i] + (1.0 - cfg.beta1) * g[i];
            m2[i] = cfg.beta2 * m2[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let mhat = m1[i] / c1;
            let vhat = m2[i] / c2;
            v[i] -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
        }
        if !p.value.is_finite() {
            return Err(Error::NonFinite("adam_step"));
        }
    }
    Ok(())
}
