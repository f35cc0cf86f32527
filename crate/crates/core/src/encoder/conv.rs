//! Local-temporal stream: valid 1-D convolution, ReLU, batch norm, and
//! global average pooling.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::init::uniform_fan_in;
use crate::math::{Param, ParamSet, Tensor};

pub const BN_EPS: f64 = 1e-5;
/// Weight of the previous running statistic in the exponential update.
pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    /// Batch norm uses statistics of the current mini-batch.
    Train,
    /// Batch norm uses the running statistics.
    Infer,
}

/// One convolution block. `weight` is `D_out × D_in × ΔT`.
#[derive(Debug, Clone, PartialEq)]
pub struct TcnLayerParams {
    pub weight: Param,
    pub bias: Param,
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Tensor,
    pub running_var: Tensor,
}

impl TcnLayerParams {
    pub fn new(prefix: &str, in_ch: usize, out_ch: usize, kernel: usize, rng: &mut impl Rng) -> Self {
        let weight = uniform_fan_in(&[out_ch, in_ch, kernel], in_ch * kernel, rng);
        Self::from_weight(prefix, weight)
    }

    /// Builds a layer around an explicit filter, with zero bias and identity batch norm.
    pub fn from_weight(prefix: &str, weight: Tensor) -> Self {
        let out_ch = weight.shape()[0];
        Self {
            weight: Param::new(format!("{prefix}.W"), weight),
            bias: Param::new(format!("{prefix}.b"), Tensor::zeros(&[out_ch])),
            gamma: Param::new(format!("{prefix}.gamma"), Tensor::full(&[out_ch], 1.0)),
            beta: Param::new(format!("{prefix}.beta"), Tensor::zeros(&[out_ch])),
            running_mean: Tensor::zeros(&[out_ch]),
            running_var: Tensor::full(&[out_ch], 1.0),
        }
    }

    pub fn out_channels(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn kernel(&self) -> usize {
        self.weight.value.shape()[2]
    }

    pub fn update_running(&mut self, stats: &BnStats) {
        for (r, &m) in self.running_mean.data_mut().iter_mut().zip(&stats.mean) {
            *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * m;
        }
        for (r, &v) in self.running_var.data_mut().iter_mut().zip(&stats.var) {
            *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * v;
        }
    }
}

impl ParamSet for TcnLayerParams {
    fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias, &self.gamma, &self.beta]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias, &mut self.gamma, &mut self.beta]
    }
}

/// Per-channel batch statistics (biased variance) of the post-ReLU activations.
#[derive(Debug, Clone, PartialEq)]
pub struct BnStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Output length of a valid, stride-1 convolution.
pub fn output_len(input_len: usize, kernel: usize) -> Result<usize> {
    if kernel == 0 {
        return Err(Error::InvalidArgument("kernel size must be at least 1".into()));
    }
    if input_len < kernel {
        return Err(Error::InputTooShort {
            len: input_len,
            kernel,
        });
    }
    Ok(input_len - kernel + 1)
}

/// Filter reordered to `[o][k][i]`, so each output is one dot product with a
/// contiguous window of input rows.
fn window_major(weight: &Tensor) -> Vec<f64> {
    let s = weight.shape();
    let (cout, cin, k) = (s[0], s[1], s[2]);
    let w = weight.data();
    let mut out = vec![0.0; w.len()];
    for o in 0..cout {
        for i in 0..cin {
            for kk in 0..k {
                out[o * k * cin + kk * cin + i] = w[o * cin * k + i * k + kk];
            }
        }
    }
    out
}

fn conv_raw(input: &[f64], t_in: usize, cin: usize, wt: &[f64], bias: &[f64], k: usize) -> Vec<f64> {
    let cout = bias.len();
    let t_out = t_in - k + 1;
    let span = k * cin;
    let mut out = vec![0.0; t_out * cout];
    for t in 0..t_out {
        let window = &input[t * cin..t * cin + span];
        for o in 0..cout {
            let filt = &wt[o * span..(o + 1) * span];
            out[t * cout + o] = bias[o] + filt.iter().zip(window).map(|(a, b)| a * b).sum::<f64>();
        }
    }
    out
}

fn check_block_input(input: &Tensor, layer: &TcnLayerParams) -> Result<usize> {
    let (t_in, cin) = input.dims2()?;
    if cin != layer.in_channels() {
        return Err(Error::ShapeMismatch {
            op: "conv1d_block",
            expected: vec![t_in, layer.in_channels()],
            got: vec![t_in, cin],
        });
    }
    output_len(t_in, layer.kernel())
}

/// `W ∗ F + b` with no padding and stride 1: `T × D_in → (T − ΔT + 1) × D_out`.
pub fn conv1d_valid(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (t_in, cin) = input.dims2()?;
    let s = weight.shape();
    if s.len() != 3 || s[1] != cin || bias.shape() != [s[0]] {
        return Err(Error::ShapeMismatch {
            op: "conv1d_valid",
            expected: vec![bias.len(), cin, 0],
            got: s.to_vec(),
        });
    }
    let t_out = output_len(t_in, s[2])?;
    let out = conv_raw(input.data(), t_in, cin, &window_major(weight), bias.data(), s[2]);
    let out = Tensor::matrix(t_out, s[0], out)?;
    out.ensure_finite("conv1d_valid")?;
    Ok(out)
}

/// `BN(ReLU(W ∗ F + b))` for one sample. In train mode the sample is its own
/// mini-batch.
pub fn conv1d_block(input: &Tensor, layer: &TcnLayerParams, mode: Mode) -> Result<Tensor> {
    let (mut outs, _) = conv1d_block_batch(std::slice::from_ref(input), layer, mode)?;
    Ok(outs.pop().expect("one output per input"))
}

/// Batched block. Train mode normalizes each channel over batch × time and
/// returns those statistics; running statistics are left untouched.
pub fn conv1d_block_batch(
    inputs: &[Tensor],
    layer: &TcnLayerParams,
    mode: Mode,
) -> Result<(Vec<Tensor>, Option<BnStats>)> {
    if inputs.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut t_out = 0;
    for x in inputs {
        t_out = check_block_input(x, layer)?;
    }
    let t_in = inputs[0].dims2()?.0;
    if inputs.iter().any(|x| x.dims2().map(|d| d.0).ok() != Some(t_in)) {
        return Err(Error::InvalidArgument("batch samples differ in length".into()));
    }
    let cout = layer.out_channels();
    let raw: Vec<&[f64]> = inputs.iter().map(|x| x.data()).collect();
    let (outs, stats) = match mode {
        Mode::Train => {
            let (outs, trace) = block_forward_train(&raw, t_in, layer);
            (outs, Some(trace.stats))
        }
        Mode::Infer => (
            raw.iter().map(|x| block_forward_infer(x, t_in, layer)).collect(),
            None,
        ),
    };
    let outs = outs
        .into_iter()
        .map(|o| {
            let t = Tensor::matrix(t_out, cout, o)?;
            t.ensure_finite("conv1d_block")?;
            Ok(t)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((outs, stats))
}

/// Per-channel mean over the time axis.
pub fn global_avg_pool(f: &Tensor) -> Result<Tensor> {
    let (t, c) = f.dims2()?;
    Ok(Tensor::vector(gap(f.data(), t, c)))
}

pub(crate) fn gap(f: &[f64], t: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; c];
    for row in f.chunks_exact(c) {
        for (o, &v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    out.iter_mut().for_each(|v| *v /= t as f64);
    out
}

pub(crate) struct BlockTrace {
    t_out: usize,
    pre: Vec<Vec<f64>>,
    xhat: Vec<Vec<f64>>,
    inv_std: Vec<f64>,
    pub(crate) stats: BnStats,
}

pub(crate) fn block_forward_train(inputs: &[&[f64]], t_in: usize, layer: &TcnLayerParams) -> (Vec<Vec<f64>>, BlockTrace) {
    let (cin, cout, k) = (layer.in_channels(), layer.out_channels(), layer.kernel());
    let t_out = t_in - k + 1;
    let wt = window_major(&layer.weight.value);
    let bias = layer.bias.value.data();
    let pre: Vec<Vec<f64>> = inputs.iter().map(|x| conv_raw(x, t_in, cin, &wt, bias, k)).collect();

    let n = (inputs.len() * t_out) as f64;
    let mut mean = vec![0.0; cout];
    for z in &pre {
        for row in z.chunks_exact(cout) {
            for (m, &v) in mean.iter_mut().zip(row) {
                *m += v.max(0.0);
            }
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; cout];
    for z in &pre {
        for row in z.chunks_exact(cout) {
            for c in 0..cout {
                let d = row[c].max(0.0) - mean[c];
                var[c] += d * d;
            }
        }
    }
    var.iter_mut().for_each(|v| *v /= n);
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();

    let (gamma, beta) = (layer.gamma.value.data(), layer.beta.value.data());
    let mut xhat = Vec::with_capacity(pre.len());
    let mut outs = Vec::with_capacity(pre.len());
    for z in &pre {
        let mut xh = vec![0.0; z.len()];
        let mut y = vec![0.0; z.len()];
        for (idx, &v) in z.iter().enumerate() {
            let c = idx % cout;
            xh[idx] = (v.max(0.0) - mean[c]) * inv_std[c];
            y[idx] = gamma[c] * xh[idx] + beta[c];
        }
        xhat.push(xh);
        outs.push(y);
    }
    (
        outs,
        BlockTrace {
            t_out,
            pre,
            xhat,
            inv_std,
            stats: BnStats { mean, var },
        },
    )
}

pub(crate) fn block_forward_infer(input: &[f64], t_in: usize, layer: &TcnLayerParams) -> Vec<f64> {
    let (cin, cout, k) = (layer.in_channels(), layer.out_channels(), layer.kernel());
    let z = conv_raw(input, t_in, cin, &window_major(&layer.weight.value), layer.bias.value.data(), k);
    let (gamma, beta) = (layer.gamma.value.data(), layer.beta.value.data());
    let (rm, rv) = (layer.running_mean.data(), layer.running_var.data());
    z.iter()
        .enumerate()
        .map(|(idx, &v)| {
            let c = idx % cout;
            gamma[c] * (v.max(0.0) - rm[c]) / (rv[c] + BN_EPS).sqrt() + beta[c]
        })
        .collect()
}

/// Gradient buffers for one block.
pub(crate) struct TcnGrads {
    pub(crate) weight: Vec<f64>,
    pub(crate) bias: Vec<f64>,
    pub(crate) gamma: Vec<f64>,
    pub(crate) beta: Vec<f64>,
}

impl TcnGrads {
    pub(crate) fn new(layer: &TcnLayerParams) -> Self {
        let c = layer.out_channels();
        Self {
            weight: vec![0.0; layer.weight.len()],
            bias: vec![0.0; c],
            gamma: vec![0.0; c],
            beta: vec![0.0; c],
        }
    }

    pub(crate) fn apply(&self, layer: &mut TcnLayerParams) {
        layer.weight.accumulate(&self.weight);
        layer.bias.accumulate(&self.bias);
        layer.gamma.accumulate(&self.gamma);
        layer.beta.accumulate(&self.beta);
    }
}

/// Backward through a train-mode block. Returns input gradients when
/// `need_input_grad` is set (empty vectors otherwise).
pub(crate) fn block_backward(
    inputs: &[&[f64]],
    t_in: usize,
    layer: &TcnLayerParams,
    trace: &BlockTrace,
    douts: &[Vec<f64>],
    grads: &mut TcnGrads,
    need_input_grad: bool,
) -> Vec<Vec<f64>> {
    let (cin, cout, k) = (layer.in_channels(), layer.out_channels(), layer.kernel());
    let t_out = trace.t_out;
    let n = (inputs.len() * t_out) as f64;
    let gamma = layer.gamma.value.data();

    // Batch-norm reductions over every (sample, time) position.
    let mut sum_dxhat = vec![0.0; cout];
    let mut sum_dxhat_xhat = vec![0.0; cout];
    for (dy, xh) in douts.iter().zip(&trace.xhat) {
        for (idx, (&g, &x)) in dy.iter().zip(xh).enumerate() {
            let c = idx % cout;
            grads.gamma[c] += g * x;
            grads.beta[c] += g;
            let dx = g * gamma[c];
            sum_dxhat[c] += dx;
            sum_dxhat_xhat[c] += dx * x;
        }
    }

    let wt = window_major(&layer.weight.value);
    let span = k * cin;
    let mut dwt = vec![0.0; wt.len()];
    let mut dinputs = Vec::with_capacity(inputs.len());
    for ((x, dy), (z, xh)) in inputs.iter().zip(douts).zip(trace.pre.iter().zip(&trace.xhat)) {
        let mut dz = vec![0.0; z.len()];
        for idx in 0..z.len() {
            if z[idx] > 0.0 {
                let c = idx % cout;
                let dx = dy[idx] * gamma[c];
                dz[idx] = trace.inv_std[c] / n * (n * dx - sum_dxhat[c] - xh[idx] * sum_dxhat_xhat[c]);
            }
        }
        let mut dx_in = if need_input_grad { vec![0.0; t_in * cin] } else { Vec::new() };
        for t in 0..t_out {
            let window = &x[t * cin..t * cin + span];
            for o in 0..cout {
                let g = dz[t * cout + o];
                if g == 0.0 {
                    continue;
                }
                grads.bias[o] += g;
                for (a, &w) in dwt[o * span..(o + 1) * span].iter_mut().zip(window) {
                    *a += g * w;
                }
                if need_input_grad {
                    let filt = &wt[o * span..(o + 1) * span];
                    for (a, &f) in dx_in[t * cin..t * cin + span].iter_mut().zip(filt) {
                        *a += g * f;
                    }
                }
            }
        }
        dinputs.push(dx_in);
    }
    for o in 0..cout {
        for i in 0..cin {
            for kk in 0..k {
                grads.weight[o * cin * k + i * k + kk] += dwt[o * span + kk * cin + i];
            }
        }
    }
    dinputs
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn conv_oracle(x: &Tensor, w: &Tensor, b: &Tensor) -> Tensor {
        let (t_in, cin) = x.dims2().unwrap();
        let (cout, k) = (w.shape()[0], w.shape()[2]);
        let t_out = t_in - k + 1;
        let mut out = Tensor::zeros(&[t_out, cout]);
        for t in 0..t_out {
            for o in 0..cout {
                let mut s = b.at(&[o]);
                for i in 0..cin {
                    for kk in 0..k {
                        s += w.at(&[o, i, kk]) * x.at(&[t + kk, i]);
                    }
                }
                out.set(&[t, o], s);
            }
        }
        out
    }

    #[test]
    fn valid_conv_matches_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..30 {
            let x = uniform_fan_in(&[9, 3], 1, &mut rng);
            let w = uniform_fan_in(&[4, 3, 3], 1, &mut rng);
            let b = uniform_fan_in(&[4], 1, &mut rng);
            let y = conv1d_valid(&x, &w, &b).unwrap();
            assert_eq!(y.shape(), &[7, 4]);
            assert!(y.max_abs_diff(&conv_oracle(&x, &w, &b)) < 1e-12);
        }
    }

    #[test]
    fn identity_filter_normalizes_relu_of_input() {
        let mut w = Tensor::zeros(&[2, 2, 1]);
        w.set(&[0, 0, 0], 1.0);
        w.set(&[1, 1, 0], 1.0);
        let layer = TcnLayerParams::from_weight("c", w);
        let x = Tensor::from_rows(&[&[1.0, -2.0], &[3.0, 4.0], &[-1.0, 2.0], &[2.0, 0.5]]).unwrap();
        let y = conv1d_block(&x, &layer, Mode::Train).unwrap();
        for c in 0..2 {
            let col: Vec<f64> = (0..4).map(|t| x.at(&[t, c]).max(0.0)).collect();
            let m = col.iter().sum::<f64>() / 4.0;
            let v = col.iter().map(|a| (a - m).powi(2)).sum::<f64>() / 4.0;
            for t in 0..4 {
                let expected = (col[t] - m) / (v + BN_EPS).sqrt();
                assert!((y.at(&[t, c]) - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn constant_input_collapses_to_beta() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut layer = TcnLayerParams::new("c", 2, 3, 2, &mut rng);
        layer.beta.value = Tensor::vector(vec![0.5, -1.0, 2.0]);
        let x = Tensor::from_rows(&[&[0.4, 1.0][..]; 6]).unwrap();
        let pre = conv1d_valid(&x, &layer.weight.value, &layer.bias.value).unwrap();
        for t in 1..5 {
            assert_eq!(pre.row(t), pre.row(0));
        }
        let y = conv1d_block(&x, &layer, Mode::Train).unwrap();
        for t in 0..5 {
            assert_eq!(y.row(t), &[0.5, -1.0, 2.0]);
        }
    }

    #[test]
    fn short_input_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let layer = TcnLayerParams::new("c", 2, 2, 5, &mut rng);
        assert!(matches!(
            conv1d_block(&Tensor::zeros(&[4, 2]), &layer, Mode::Train),
            Err(Error::InputTooShort { len: 4, kernel: 5 })
        ));
    }

    #[test]
    fn output_length_contract() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for k in 1..6 {
            let layer = TcnLayerParams::new("c", 3, 2, k, &mut rng);
            let y = conv1d_block(&uniform_fan_in(&[10, 3], 1, &mut rng), &layer, Mode::Infer).unwrap();
            assert_eq!(y.shape()[0], 10 - k + 1);
        }
    }

    #[test]
    fn train_mode_output_is_standardized() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for scale in [1.0, 100.0] {
            let layer = TcnLayerParams::new("c", 3, 4, 3, &mut rng);
            let xs: Vec<Tensor> = (0..5)
                .map(|_| uniform_fan_in(&[12, 3], 1, &mut rng).map(|v| v * scale))
                .collect();
            let (ys, stats) = conv1d_block_batch(&xs, &layer, Mode::Train).unwrap();
            let stats = stats.unwrap();
            for c in 0..4 {
                let pre_var = stats.var[c];
                if pre_var <= 1e-6 {
                    continue;
                }
                let vals: Vec<f64> = ys.iter().flat_map(|y| (0..10).map(move |t| y.at(&[t, c]))).collect();
                let m = vals.iter().sum::<f64>() / vals.len() as f64;
                let v = vals.iter().map(|a| (a - m).powi(2)).sum::<f64>() / vals.len() as f64;
                assert!(m.abs() < 1e-9);
                // ε in the denominator shrinks the variance to var / (var + ε).
                assert!((v - pre_var / (pre_var + BN_EPS)).abs() < 1e-12);
                if pre_var > 10.0 {
                    assert!((v - 1.0).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn infer_mode_has_no_batch_coupling() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut layer = TcnLayerParams::new("c", 2, 3, 2, &mut rng);
        layer.running_mean = Tensor::vector(vec![0.1, 0.2, 0.3]);
        layer.running_var = Tensor::vector(vec![0.5, 2.0, 1.5]);
        let a = uniform_fan_in(&[6, 2], 1, &mut rng);
        let b = uniform_fan_in(&[6, 2], 1, &mut rng);
        let alone = conv1d_block(&a, &layer, Mode::Infer).unwrap();
        let (both, stats) = conv1d_block_batch(&[a, b], &layer, Mode::Infer).unwrap();
        assert!(stats.is_none());
        assert_eq!(alone, both[0]);
    }

    #[test]
    fn running_stats_update_with_momentum() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut layer = TcnLayerParams::new("c", 1, 2, 1, &mut rng);
        layer.update_running(&BnStats {
            mean: vec![1.0, 2.0],
            var: vec![3.0, 0.0],
        });
        assert!((layer.running_mean.data()[0] - 0.1).abs() < 1e-15);
        assert!((layer.running_var.data()[0] - 1.2).abs() < 1e-15);
        assert!((layer.running_var.data()[1] - 0.9).abs() < 1e-15);
    }

    #[test]
    fn gap_examples() {
        let f = Tensor::from_rows(&[&[1.0, 0.0], &[3.0, 2.0]]).unwrap();
        assert_eq!(global_avg_pool(&f).unwrap().data(), &[2.0, 1.0]);
        let c = Tensor::from_rows(&[&[4.5, -1.0][..]; 5]).unwrap();
        assert_eq!(global_avg_pool(&c).unwrap().data(), &[4.5, -1.0]);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut layer = TcnLayerParams::new("c", 2, 3, 3, &mut rng);
        layer.gamma.value = Tensor::vector(vec![1.3, 0.7, -0.4]);
        layer.beta.value = Tensor::vector(vec![0.2, -0.1, 0.5]);
        let xs: Vec<Tensor> = (0..3).map(|_| uniform_fan_in(&[7, 2], 1, &mut rng)).collect();
        let probes: Vec<Vec<f64>> = (0..3).map(|_| uniform_fan_in(&[15], 1, &mut rng).into_data()).collect();
        let loss = |l: &TcnLayerParams| -> Result<f64> {
            let (ys, _) = conv1d_block_batch(&xs, l, Mode::Train)?;
            Ok(ys
                .iter()
                .zip(&probes)
                .map(|(y, p)| y.data().iter().zip(p).map(|(a, b)| a * b).sum::<f64>())
                .sum())
        };
        let raw: Vec<&[f64]> = xs.iter().map(|x| x.data()).collect();
        let (_, trace) = block_forward_train(&raw, 7, &layer);
        let mut g = TcnGrads::new(&layer);
        block_backward(&raw, 7, &layer, &trace, &probes, &mut g, false);
        g.apply(&mut layer);
        let r = crate::math::finite_diff_check(&mut layer, loss, &Default::default(), &mut rng).unwrap();
        assert!(r.max_rel_err() < 1e-6, "{:?}", r.worst());
    }
}
