use rand::Rng;

use super::init;
use super::tensor::{Param, ParamSet, Tensor};
use crate::error::{Error, Result};

/// Affine map `y = W·x + b` with `W: out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Param,
    pub bias: Param,
}

impl Linear {
    pub fn new(prefix: &str, input: usize, output: usize, rng: &mut impl Rng) -> Self {
        Self {
            weight: Param::new(
                format!("{prefix}.weight"),
                init::uniform_fan_in(&[output, input], input, rng),
            ),
            bias: Param::new(format!("{prefix}.bias"), Tensor::zeros(&[output])),
        }
    }

    pub fn zeros(prefix: &str, input: usize, output: usize) -> Self {
        Self {
            weight: Param::new(format!("{prefix}.weight"), Tensor::zeros(&[output, input])),
            bias: Param::new(format!("{prefix}.bias"), Tensor::zeros(&[output])),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn output_dim(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let (out, inp) = (self.output_dim(), self.input_dim());
        if x.len() != inp {
            return Err(Error::ShapeMismatch {
                op: "linear",
                expected: vec![inp],
                got: vec![x.len()],
            });
        }
        let w = self.weight.value.data();
        let b = self.bias.value.data();
        Ok((0..out)
            .map(|o| b[o] + w[o * inp..(o + 1) * inp].iter().zip(x).map(|(a, c)| a * c).sum::<f64>())
            .collect())
    }

    /// Accumulates parameter gradients for one input and returns `dx`.
    pub fn backward(&mut self, x: &[f64], dy: &[f64]) -> Vec<f64> {
        let (out, inp) = (self.output_dim(), self.input_dim());
        let mut dx = vec![0.0; inp];
        let w = self.weight.value.data();
        for o in 0..out {
            let row = &w[o * inp..(o + 1) * inp];
            for (d, &wi) in dx.iter_mut().zip(row) {
                *d += wi * dy[o];
            }
        }
        let gw = self.weight.grad.data_mut();
        for o in 0..out {
            let g = dy[o];
            if g != 0.0 {
                for (gi, &xi) in gw[o * inp..(o + 1) * inp].iter_mut().zip(x) {
                    *gi += g * xi;
                }
            }
        }
        self.bias.accumulate(dy);
        dx
    }
}

impl ParamSet for Linear {
    fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }
}
