use rand::Rng;

use crate::error::{Error, Result};
use crate::math::init::uniform_fan_in;
use crate::math::ops::{sigmoid, sigmoid_grad_from_output, tanh_grad_from_output};
use crate::math::{Param, ParamSet, Tensor};

const GATES: [&str; 4] = ["f", "i", "o", "c"];
const F: usize = 0;
const I: usize = 1;
const O: usize = 2;
const C: usize = 3;

/// Input weights `W_*: d × D`, recurrent weights `U_*: d × d` and biases `b_*: d`
/// for the forget, input, output and cell-candidate gates, in that order.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    pub w: [Param; 4],
    pub u: [Param; 4],
    pub b: [Param; 4],
}

impl LstmParams {
    pub fn new(prefix: &str, input_dim: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let w = GATES.map(|g| {
            Param::new(
                format!("{prefix}.W_{g}"),
                uniform_fan_in(&[hidden, input_dim], input_dim, rng),
            )
        });
        let u = GATES.map(|g| {
            Param::new(
                format!("{prefix}.U_{g}"),
                uniform_fan_in(&[hidden, hidden], hidden, rng),
            )
        });
        let b = GATES.map(|g| Param::new(format!("{prefix}.b_{g}"), Tensor::zeros(&[hidden])));
        Self { w, u, b }
    }

    pub fn zeros(prefix: &str, input_dim: usize, hidden: usize) -> Self {
        Self {
            w: GATES.map(|g| Param::new(format!("{prefix}.W_{g}"), Tensor::zeros(&[hidden, input_dim]))),
            u: GATES.map(|g| Param::new(format!("{prefix}.U_{g}"), Tensor::zeros(&[hidden, hidden]))),
            b: GATES.map(|g| Param::new(format!("{prefix}.b_{g}"), Tensor::zeros(&[hidden]))),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w[0].value.shape()[0]
    }

    pub fn input_dim(&self) -> usize {
        self.w[0].value.shape()[1]
    }
}

impl ParamSet for LstmParams {
    fn params(&self) -> Vec<&Param> {
        self.w.iter().chain(&self.u).chain(&self.b).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.w
            .iter_mut()
            .chain(self.u.iter_mut())
            .chain(self.b.iter_mut())
            .collect()
    }
}

/// Activations kept from the forward pass for backpropagation through time.
#[derive(Debug, Clone)]
pub(crate) struct LstmTrace {
    steps: usize,
    /// `[t][gate][j]`, post-activation.
    gates: Vec<f64>,
    cells: Vec<f64>,
    hidden: Vec<f64>,
}

impl LstmTrace {
    pub(crate) fn hidden(&self) -> &[f64] {
        &self.hidden
    }
}

/// Gradient buffers shaped like [`LstmParams`].
#[derive(Debug, Clone)]
pub(crate) struct LstmGrads {
    w: [Vec<f64>; 4],
    u: [Vec<f64>; 4],
    b: [Vec<f64>; 4],
}

impl LstmGrads {
    pub(crate) fn new(p: &LstmParams) -> Self {
        let (d, dim) = (p.hidden(), p.input_dim());
        Self {
            w: std::array::from_fn(|_| vec![0.0; d * dim]),
            u: std::array::from_fn(|_| vec![0.0; d * d]),
            b: std::array::from_fn(|_| vec![0.0; d]),
        }
    }

    pub(crate) fn apply(&self, p: &mut LstmParams) {
        for g in 0..4 {
            p.w[g].accumulate(&self.w[g]);
            p.u[g].accumulate(&self.u[g]);
            p.b[g].accumulate(&self.b[g]);
        }
    }
}

fn check_input(x: &Tensor, p: &LstmParams) -> Result<(usize, usize)> {
    let (t, dim) = x.dims2()?;
    if dim != p.input_dim() {
        return Err(Error::ShapeMismatch {
            op: "lstm_forward",
            expected: vec![t, p.input_dim()],
            got: vec![t, dim],
        });
    }
    Ok((t, dim))
}

/// Runs the cell over every row of `x` from zero initial state and returns the
/// hidden sequence `T × d`.
pub fn lstm_forward(x: &Tensor, p: &LstmParams) -> Result<Tensor> {
    let d = p.hidden();
    lstm_forward_from(x, p, &Tensor::zeros(&[d]), &Tensor::zeros(&[d]))
}

/// As [`lstm_forward`], starting from explicit `h₀` and `c₀`.
pub fn lstm_forward_from(x: &Tensor, p: &LstmParams, h0: &Tensor, c0: &Tensor) -> Result<Tensor> {
    let d = p.hidden();
    for s in [h0, c0] {
        if s.shape() != [d] {
            return Err(Error::ShapeMismatch {
                op: "lstm_forward",
                expected: vec![d],
                got: s.shape().to_vec(),
            });
        }
    }
    let trace = lstm_trace(x, p, h0.data(), c0.data())?;
    let out = Tensor::matrix(trace.steps, d, trace.hidden)?;
    out.ensure_finite("lstm_forward")?;
    Ok(out)
}

pub(crate) fn lstm_trace(x: &Tensor, p: &LstmParams, h0: &[f64], c0: &[f64]) -> Result<LstmTrace> {
    let (steps, dim) = check_input(x, p)?;
    let d = p.hidden();
    let xs = x.data();
    let w: [&[f64]; 4] = std::array::from_fn(|g| p.w[g].value.data());
    let u: [&[f64]; 4] = std::array::from_fn(|g| p.u[g].value.data());
    let b: [&[f64]; 4] = std::array::from_fn(|g| p.b[g].value.data());

    let mut gates = vec![0.0; steps * 4 * d];
    let mut cells = vec![0.0; steps * d];
    let mut hidden = vec![0.0; steps * d];
    let mut h_prev = h0.to_vec();
    let mut c_prev = c0.to_vec();
    for t in 0..steps {
        let xt = &xs[t * dim..(t + 1) * dim];
        let gt = &mut gates[t * 4 * d..(t + 1) * 4 * d];
        for g in 0..4 {
            for j in 0..d {
                let wx: f64 = w[g][j * dim..(j + 1) * dim].iter().zip(xt).map(|(a, b)| a * b).sum();
                let uh: f64 = u[g][j * d..(j + 1) * d].iter().zip(&h_prev).map(|(a, b)| a * b).sum();
                let pre = wx + uh + b[g][j];
                gt[g * d + j] = if g == C { pre.tanh() } else { sigmoid(pre) };
            }
        }
        let ct = &mut cells[t * d..(t + 1) * d];
        let ht = &mut hidden[t * d..(t + 1) * d];
        for j in 0..d {
            ct[j] = gt[F * d + j] * c_prev[j] + gt[I * d + j] * gt[C * d + j];
            ht[j] = gt[O * d + j] * ct[j].tanh();
        }
        h_prev.copy_from_slice(ht);
        c_prev.copy_from_slice(ct);
    }
    Ok(LstmTrace {
        steps,
        gates,
        cells,
        hidden,
    })
}

/// Backpropagation through time from zero initial state. `dh` is the gradient
/// of the loss with respect to every hidden state (`T × d`).
pub(crate) fn lstm_backward(x: &Tensor, p: &LstmParams, trace: &LstmTrace, dh: &[f64], grads: &mut LstmGrads) {
    let d = p.hidden();
    let dim = p.input_dim();
    let xs = x.data();
    let u: [&[f64]; 4] = std::array::from_fn(|g| p.u[g].value.data());
    let mut dh_next = vec![0.0; d];
    let mut dc_next = vec![0.0; d];
    let mut dpre = vec![0.0; 4 * d];
    let zeros = vec![0.0; d];

    for t in (0..trace.steps).rev() {
        let gt = &trace.gates[t * 4 * d..(t + 1) * 4 * d];
        let ct = &trace.cells[t * d..(t + 1) * d];
        let (c_prev, h_prev) = if t == 0 {
            (&zeros[..], &zeros[..])
        } else {
            (
                &trace.cells[(t - 1) * d..t * d],
                &trace.hidden[(t - 1) * d..t * d],
            )
        };
        for j in 0..d {
            let dht = dh[t * d + j] + dh_next[j];
            let tc = ct[j].tanh();
            let (f, i, o, g) = (gt[F * d + j], gt[I * d + j], gt[O * d + j], gt[C * d + j]);
            let dc = dc_next[j] + dht * o * tanh_grad_from_output(tc);
            dpre[O * d + j] = dht * tc * sigmoid_grad_from_output(o);
            dpre[F * d + j] = dc * c_prev[j] * sigmoid_grad_from_output(f);
            dpre[I * d + j] = dc * g * sigmoid_grad_from_output(i);
            dpre[C * d + j] = dc * i * tanh_grad_from_output(g);
            dc_next[j] = dc * f;
        }
        let xt = &xs[t * dim..(t + 1) * dim];
        dh_next.iter_mut().for_each(|v| *v = 0.0);
        for g in 0..4 {
            for j in 0..d {
                let gj = dpre[g * d + j];
                if gj == 0.0 {
                    continue;
                }
                for (a, &xv) in grads.w[g][j * dim..(j + 1) * dim].iter_mut().zip(xt) {
                    *a += gj * xv;
                }
                let urow = &u[g][j * d..(j + 1) * d];
                for k in 0..d {
                    grads.u[g][j * d + k] += gj * h_prev[k];
                    dh_next[k] += urow[k] * gj;
                }
                grads.b[g][j] += gj;
            }
        }
    }
}
