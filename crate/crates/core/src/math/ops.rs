//! Forward/backward kernel pairs.
//!
//! Every differentiable operation comes with an explicit gradient rule; the
//! encoders and fusion heads chain these by hand instead of recording a tape.

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Offset inside the log of [`cross_entropy`].
pub const CE_EPS: f64 = 1e-12;

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.dims2()?;
    let (k2, n) = b.dims2()?;
    if k != k2 {
        return Err(Error::ShapeMismatch {
            op: "matmul",
            expected: vec![k, n],
            got: vec![k2, n],
        });
    }
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &aip) in ad[i * k..(i + 1) * k].iter().enumerate() {
            for (o, &bpj) in orow.iter_mut().zip(&bd[p * n..(p + 1) * n]) {
                *o += aip * bpj;
            }
        }
    }
    let out = Tensor::matrix(m, n, out)?;
    out.ensure_finite("matmul")?;
    Ok(out)
}

/// Gradients of `C = A·B` given `dC`: returns `(dA, dB) = (dC·Bᵀ, Aᵀ·dC)`.
pub fn matmul_backward(a: &Tensor, b: &Tensor, dc: &Tensor) -> Result<(Tensor, Tensor)> {
    let (m, k) = a.dims2()?;
    let (_, n) = b.dims2()?;
    if dc.shape() != [m, n] {
        return Err(Error::ShapeMismatch {
            op: "matmul_backward",
            expected: vec![m, n],
            got: dc.shape().to_vec(),
        });
    }
    let (ad, bd, gd) = (a.data(), b.data(), dc.data());
    let mut da = vec![0.0; m * k];
    let mut db = vec![0.0; k * n];
    for i in 0..m {
        let grow = &gd[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &bd[p * n..(p + 1) * n];
            da[i * k + p] = grow.iter().zip(brow).map(|(g, b)| g * b).sum();
            let aip = ad[i * k + p];
            for (d, &g) in db[p * n..(p + 1) * n].iter_mut().zip(grow) {
                *d += aip * g;
            }
        }
    }
    Ok((Tensor::matrix(m, k, da)?, Tensor::matrix(k, n, db)?))
}

/// Max-subtracted softmax.
pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = z.iter().map(|&x| (x - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|x| *x /= sum);
    out
}

pub fn softmax_tensor(z: &Tensor) -> Tensor {
    Tensor::new(z.shape().to_vec(), softmax(z.data())).expect("same shape")
}

/// Vector-Jacobian product of softmax: `dz = p ⊙ (dp − ⟨p, dp⟩)`.
pub fn softmax_backward(p: &[f64], dp: &[f64]) -> Vec<f64> {
    let dot: f64 = p.iter().zip(dp).map(|(a, b)| a * b).sum();
    p.iter().zip(dp).map(|(&pi, &gi)| pi * (gi - dot)).collect()
}

/// `−ln(p[y] + ε)`, floored at zero so that `p[y] = 1` cannot go negative.
pub fn cross_entropy(p: &[f64], y: usize) -> Result<f64> {
    if y >= p.len() {
        return Err(Error::IndexOutOfRange {
            index: y,
            len: p.len(),
        });
    }
    let loss = (-(p[y] + CE_EPS).ln()).max(0.0);
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(Error::NonFinite("cross_entropy"))
    }
}

/// Gradient of [`cross_entropy`] with respect to `p`.
pub fn cross_entropy_grad(p: &[f64], y: usize) -> Result<Vec<f64>> {
    if y >= p.len() {
        return Err(Error::IndexOutOfRange {
            index: y,
            len: p.len(),
        });
    }
    let mut g = vec![0.0; p.len()];
    g[y] = -1.0 / (p[y] + CE_EPS);
    Ok(g)
}

/// Gradient of `cross_entropy(softmax(z), y)` with respect to the logits `z`,
/// given `p = softmax(z)`. Exact including the ε offset.
pub fn softmax_cross_entropy_grad(p: &[f64], y: usize) -> Vec<f64> {
    let scale = p[y] / (p[y] + CE_EPS);
    p.iter()
        .enumerate()
        .map(|(k, &pk)| scale * (pk - if k == y { 1.0 } else { 0.0 }))
        .collect()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Derivative of sigmoid expressed through its output `s`.
pub fn sigmoid_grad_from_output(s: f64) -> f64 {
    s * (1.0 - s)
}

/// Derivative of tanh expressed through its output `t`.
pub fn tanh_grad_from_output(t: f64) -> f64 {
    1.0 - t * t
}

pub fn relu(x: f64) -> f64 {
    x.max(0.0)
}

pub fn relu_grad(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Sigmoid,
    Tanh,
    Relu,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => x.tanh(),
            Activation::Relu => relu(x),
        }
    }

    /// Derivative at pre-activation `x`.
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Sigmoid => sigmoid_grad_from_output(sigmoid(x)),
            Activation::Tanh => tanh_grad_from_output(x.tanh()),
            Activation::Relu => relu_grad(x),
        }
    }

    pub fn forward(self, x: &Tensor) -> Tensor {
        x.map(|v| self.apply(v))
    }

    /// `dx = dy ⊙ f'(x)`.
    pub fn backward(self, x: &Tensor, dy: &Tensor) -> Tensor {
        let data = x
            .data()
            .iter()
            .zip(dy.data())
            .map(|(&xi, &gi)| gi * self.derivative(xi))
            .collect();
        Tensor::new(x.shape().to_vec(), data).expect("same shape")
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}
