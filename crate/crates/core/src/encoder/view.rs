use rand::Rng;
use serde::{Deserialize, Serialize};

use super::attention::{pool, pool_backward, AttentionParams};
use super::conv::{
    block_backward, block_forward_infer, block_forward_train, gap, output_len, BlockTrace, BnStats, Mode,
    TcnGrads, TcnLayerParams,
};
use super::lstm::{lstm_backward, lstm_trace, LstmGrads, LstmParams, LstmTrace};
use crate::error::{Error, Result};
use crate::math::ops::{cross_entropy, softmax, softmax_cross_entropy_grad};
use crate::math::{Linear, Param, ParamSet, Tensor};

/// Shape hyperparameters of one view encoder.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    /// LSTM hidden width.
    pub hidden: usize,
    /// Output channels `D_1..D_M` of the convolution blocks.
    pub conv_channels: Vec<usize>,
    /// Temporal window `ΔT` of each block.
    pub kernel_sizes: Vec<usize>,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            conv_channels: vec![64, 128, 64],
            kernel_sizes: vec![7, 5, 3],
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self, seq_len: usize) -> Result<()> {
        if self.hidden == 0 {
            return Err(Error::Config("hidden must be at least 1".into()));
        }
        if self.conv_channels.is_empty() || self.conv_channels.len() != self.kernel_sizes.len() {
            return Err(Error::Config(format!(
                "need one kernel size per conv layer (got {} channels, {} kernels)",
                self.conv_channels.len(),
                self.kernel_sizes.len()
            )));
        }
        if self.conv_channels.contains(&0) {
            return Err(Error::Config("conv channels must be positive".into()));
        }
        let mut len = seq_len;
        for &k in &self.kernel_sizes {
            len = output_len(len, k).map_err(|e| Error::Config(format!("sequence too short for conv stack: {e}")))?;
        }
        Ok(())
    }
}

/// Learnable state of one view: global stream (LSTM + attention), local stream
/// (conv blocks), and the view classifier over `concat(H_g, H_l)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewEncoderParams {
    pub lstm: LstmParams,
    pub attention: AttentionParams,
    pub tcn: Vec<TcnLayerParams>,
    pub classifier: Linear,
}

impl ViewEncoderParams {
    pub fn new(
        view: usize,
        input_dim: usize,
        seq_len: usize,
        classes: usize,
        cfg: &EncoderConfig,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        cfg.validate(seq_len)?;
        let prefix = format!("view{view}");
        let lstm = LstmParams::new(&format!("{prefix}.lstm"), input_dim, cfg.hidden, rng);
        let attention = AttentionParams::new(&format!("{prefix}.attention"), seq_len);
        let mut tcn = Vec::with_capacity(cfg.conv_channels.len());
        let mut cin = input_dim;
        for (m, (&cout, &k)) in cfg.conv_channels.iter().zip(&cfg.kernel_sizes).enumerate() {
            tcn.push(TcnLayerParams::new(&format!("{prefix}.tcn{m}"), cin, cout, k, rng));
            cin = cout;
        }
        let classifier = Linear::new(&format!("{prefix}.classifier"), cfg.hidden + cin, classes, rng);
        Ok(Self {
            lstm,
            attention,
            tcn,
            classifier,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.lstm.input_dim()
    }

    pub fn seq_len(&self) -> usize {
        self.attention.steps()
    }

    pub fn classes(&self) -> usize {
        self.classifier.output_dim()
    }

    pub fn global_width(&self) -> usize {
        self.lstm.hidden()
    }

    pub fn local_width(&self) -> usize {
        self.tcn.last().map_or(0, |l| l.out_channels())
    }

    /// Width of `H = concat(H_g, H_l)`.
    pub fn repr_width(&self) -> usize {
        self.global_width() + self.local_width()
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let expected = [self.seq_len(), self.input_dim()];
        if x.shape() != expected {
            return Err(Error::ShapeMismatch {
                op: "encode_view",
                expected: expected.to_vec(),
                got: x.shape().to_vec(),
            });
        }
        Ok(())
    }
}

impl ParamSet for ViewEncoderParams {
    fn params(&self) -> Vec<&Param> {
        let mut out = self.lstm.params();
        out.extend(self.attention.params());
        for l in &self.tcn {
            out.extend(l.params());
        }
        out.extend(self.classifier.params());
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = self.lstm.params_mut();
        out.extend(self.attention.params_mut());
        for l in &mut self.tcn {
            out.extend(l.params_mut());
        }
        out.extend(self.classifier.params_mut());
        out
    }
}

struct BatchTrace {
    lstm: Vec<LstmTrace>,
    weights: Vec<f64>,
    /// Input activations of every conv block, per sample.
    tcn_inputs: Vec<Vec<Vec<f64>>>,
    tcn: Vec<BlockTrace>,
    lens: Vec<usize>,
}

fn encode_one_infer(x: &Tensor, p: &ViewEncoderParams) -> Result<Vec<f64>> {
    let d = p.global_width();
    let trace = lstm_trace(x, &p.lstm, &vec![0.0; d], &vec![0.0; d])?;
    let mut h = pool(trace.hidden(), d, &p.attention.weights());
    let mut f = x.data().to_vec();
    let mut len = p.seq_len();
    for layer in &p.tcn {
        f = block_forward_infer(&f, len, layer);
        len = len - layer.kernel() + 1;
    }
    h.extend(gap(&f, len, p.local_width()));
    Ok(h)
}

fn encode_train(xs: &[&Tensor], p: &ViewEncoderParams) -> Result<(Vec<Vec<f64>>, BatchTrace)> {
    let d = p.global_width();
    let weights = p.attention.weights();
    let zeros = vec![0.0; d];
    let mut lstm = Vec::with_capacity(xs.len());
    let mut reprs = Vec::with_capacity(xs.len());
    for x in xs {
        let trace = lstm_trace(x, &p.lstm, &zeros, &zeros)?;
        reprs.push(pool(trace.hidden(), d, &weights));
        lstm.push(trace);
    }

    let mut acts: Vec<Vec<f64>> = xs.iter().map(|x| x.data().to_vec()).collect();
    let mut len = p.seq_len();
    let mut lens = Vec::with_capacity(p.tcn.len() + 1);
    let mut tcn_inputs = Vec::with_capacity(p.tcn.len());
    let mut tcn = Vec::with_capacity(p.tcn.len());
    for layer in &p.tcn {
        lens.push(len);
        let refs: Vec<&[f64]> = acts.iter().map(|a| a.as_slice()).collect();
        let (outs, trace) = block_forward_train(&refs, len, layer);
        tcn_inputs.push(std::mem::replace(&mut acts, outs));
        tcn.push(trace);
        len = len - layer.kernel() + 1;
    }
    lens.push(len);
    for (r, f) in reprs.iter_mut().zip(&acts) {
        r.extend(gap(f, len, p.local_width()));
    }
    Ok((
        reprs,
        BatchTrace {
            lstm,
            weights,
            tcn_inputs,
            tcn,
            lens,
        },
    ))
}

fn encode_backward(xs: &[&Tensor], p: &mut ViewEncoderParams, trace: &BatchTrace, dreprs: &[Vec<f64>]) {
    let d = p.global_width();
    let local = p.local_width();

    let mut lstm_grads = LstmGrads::new(&p.lstm);
    let mut dlogits = vec![0.0; p.seq_len()];
    for ((x, lt), dr) in xs.iter().zip(&trace.lstm).zip(dreprs) {
        let dh = pool_backward(lt.hidden(), d, &trace.weights, &dr[..d], &mut dlogits);
        lstm_backward(x, &p.lstm, lt, &dh, &mut lstm_grads);
    }
    lstm_grads.apply(&mut p.lstm);
    p.attention.logits.accumulate(&dlogits);

    let last_len = trace.lens[p.tcn.len()];
    let mut douts: Vec<Vec<f64>> = dreprs
        .iter()
        .map(|dr| {
            let g: Vec<f64> = dr[d..].iter().map(|v| v / last_len as f64).collect();
            (0..last_len).flat_map(|_| g.iter().copied()).collect()
        })
        .collect();
    debug_assert!(douts.iter().all(|g| g.len() == last_len * local));
    for m in (0..p.tcn.len()).rev() {
        let refs: Vec<&[f64]> = trace.tcn_inputs[m].iter().map(|a| a.as_slice()).collect();
        let mut grads = TcnGrads::new(&p.tcn[m]);
        douts = block_backward(&refs, trace.lens[m], &p.tcn[m], &trace.tcn[m], &douts, &mut grads, m > 0);
        grads.apply(&mut p.tcn[m]);
    }
}

/// `H = concat(H_g, H_l)` for one sample. Train mode treats the sample as its
/// own batch for batch norm.
pub fn encode_view(x: &Tensor, p: &ViewEncoderParams, mode: Mode) -> Result<Tensor> {
    p.check_input(x)?;
    let h = match mode {
        Mode::Infer => encode_one_infer(x, p)?,
        Mode::Train => encode_train(&[x], p)?.0.pop().expect("one sample"),
    };
    let h = Tensor::vector(h);
    h.ensure_finite("encode_view")?;
    Ok(h)
}

/// Representations for a batch; in train mode batch norm couples the samples.
pub fn encode_batch(xs: &[&Tensor], p: &ViewEncoderParams, mode: Mode) -> Result<Vec<Vec<f64>>> {
    if xs.is_empty() {
        return Err(Error::EmptyBatch);
    }
    for x in xs {
        p.check_input(x)?;
    }
    match mode {
        Mode::Infer => xs.iter().map(|x| encode_one_infer(x, p)).collect(),
        Mode::Train => Ok(encode_train(xs, p)?.0),
    }
}

/// `softmax(W·H + b)`.
pub fn classify_view(h: &Tensor, classifier: &Linear) -> Result<Tensor> {
    let p = Tensor::vector(softmax(&classifier.forward(h.data())?));
    p.ensure_finite("classify_view")?;
    Ok(p)
}

/// Class probabilities for every sample, inference mode.
pub fn predict_batch(xs: &[&Tensor], p: &ViewEncoderParams) -> Result<Vec<Vec<f64>>> {
    encode_batch(xs, p, Mode::Infer)?
        .iter()
        .map(|h| Ok(softmax(&p.classifier.forward(h)?)))
        .collect()
}

fn check_labels(labels: &[usize], n: usize, classes: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::EmptyBatch);
    }
    if labels.len() != n {
        return Err(Error::InvalidArgument(format!("{} labels for {n} samples", labels.len())));
    }
    if let Some(&y) = labels.iter().find(|&&y| y >= classes) {
        return Err(Error::IndexOutOfRange { index: y, len: classes });
    }
    Ok(())
}

/// Mean cross-entropy of the view classifier over a batch (train-mode batch
/// norm), without touching gradients or running statistics.
pub fn view_loss(xs: &[&Tensor], labels: &[usize], p: &ViewEncoderParams) -> Result<f64> {
    check_labels(labels, xs.len(), p.classes())?;
    let reprs = encode_batch(xs, p, Mode::Train)?;
    let mut total = 0.0;
    for (h, &y) in reprs.iter().zip(labels) {
        total += cross_entropy(&softmax(&p.classifier.forward(h)?), y)?;
    }
    Ok(total / xs.len() as f64)
}

/// Result of a forward/backward pass over one view batch.
#[derive(Debug, Clone)]
pub struct ViewForward {
    pub loss: f64,
    /// Per-sample class probabilities from this pass.
    pub probs: Vec<Vec<f64>>,
    /// Batch statistics of each conv block, for the running-stat update.
    pub bn_stats: Vec<BnStats>,
}

/// Mean cross-entropy over the batch; overwrites every gradient in `p`.
pub fn view_loss_and_grads(xs: &[&Tensor], labels: &[usize], p: &mut ViewEncoderParams) -> Result<ViewForward> {
    check_labels(labels, xs.len(), p.classes())?;
    for x in xs {
        p.check_input(x)?;
    }
    p.zero_grads();
    let (reprs, trace) = encode_train(xs, p)?;
    let n = xs.len() as f64;
    let mut loss = 0.0;
    let mut probs = Vec::with_capacity(xs.len());
    let mut dreprs = Vec::with_capacity(xs.len());
    for (h, &y) in reprs.iter().zip(labels) {
        let pr = softmax(&p.classifier.forward(h)?);
        loss += cross_entropy(&pr, y)?;
        let dz: Vec<f64> = softmax_cross_entropy_grad(&pr, y).iter().map(|g| g / n).collect();
        dreprs.push(p.classifier.backward(h, &dz));
        probs.push(pr);
    }
    encode_backward(xs, p, &trace, &dreprs);
    if p.params().iter().any(|q| !q.grad.is_finite()) {
        return Err(Error::NonFinite("view_loss_and_grads"));
    }
    Ok(ViewForward {
        loss: loss / n,
        probs,
        bn_stats: trace.tcn.into_iter().map(|t| t.stats).collect(),
    })
}
