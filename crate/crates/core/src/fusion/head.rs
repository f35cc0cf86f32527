use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::correlation::{channel_count, channel_map, check_views, correlation_grid, ChannelSet, CorrelationTensor};
use crate::error::{Error, Result};
use crate::math::init::uniform_fan_in;
use crate::math::ops::{cross_entropy, relu, softmax, softmax_cross_entropy_grad};
use crate::math::{Linear, Param, ParamSet, Tensor};

/// Default number of 1×1 fusion filters.
pub const DEFAULT_FILTERS: usize = 8;

/// How the per-view probability vectors reach the final classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    /// All correlation channels, 1×1 filters, classifier.
    Complete,
    IntraOnly,
    InterOnly,
    /// Concatenated `ŷ` laid out as a `1×(V·K)` single-channel grid, 1×1 filters, classifier.
    FusionOnly,
    /// All correlation channels flattened straight into the classifier.
    NoChannelFusion,
    /// Concatenated `ŷ` into a linear softmax head.
    Concat,
}

impl FusionMode {
    pub const ALL: [FusionMode; 6] = [
        FusionMode::Complete,
        FusionMode::IntraOnly,
        FusionMode::InterOnly,
        FusionMode::FusionOnly,
        FusionMode::NoChannelFusion,
        FusionMode::Concat,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FusionMode::Complete => "complete",
            FusionMode::IntraOnly => "intra_only",
            FusionMode::InterOnly => "inter_only",
            FusionMode::FusionOnly => "fusion_only",
            FusionMode::NoChannelFusion => "no_channel_fusion",
            FusionMode::Concat => "concat",
        }
    }

    fn channel_set(self) -> Option<ChannelSet> {
        match self {
            FusionMode::Complete | FusionMode::NoChannelFusion => Some(ChannelSet::All),
            FusionMode::IntraOnly => Some(ChannelSet::IntraOnly),
            FusionMode::InterOnly => Some(ChannelSet::InterOnly),
            FusionMode::FusionOnly | FusionMode::Concat => None,
        }
    }

    fn uses_filters(self) -> bool {
        !matches!(self, FusionMode::NoChannelFusion | FusionMode::Concat)
    }

    /// `(positions, channels)` of the head input.
    pub fn layout(self, views: usize, classes: usize) -> (usize, usize) {
        match self.channel_set() {
            Some(set) => (classes * classes, channel_count(views, set)),
            None => (views * classes, 1),
        }
    }
}

impl fmt::Display for FusionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FusionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FusionMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown fusion mode `{s}`")))
    }
}

/// `N_k` 1×1 filters over `C` channels plus the final classifier `C_f`.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionParams {
    /// `[N_k, C]`.
    pub filter_weight: Param,
    /// `[N_k]`.
    pub filter_bias: Param,
    /// `K × (P·N_k)`.
    pub classifier: Linear,
}

impl FusionParams {
    pub fn new(prefix: &str, positions: usize, channels: usize, filters: usize, classes: usize, rng: &mut impl Rng) -> Self {
        Self {
            filter_weight: Param::new(
                format!("{prefix}.filter.weight"),
                uniform_fan_in(&[filters, channels], channels, rng),
            ),
            filter_bias: Param::new(format!("{prefix}.filter.bias"), Tensor::zeros(&[filters])),
            classifier: Linear::new(&format!("{prefix}.classifier"), positions * filters, classes, rng),
        }
    }

    pub fn filters(&self) -> usize {
        self.filter_weight.value.shape()[0]
    }

    pub fn channels(&self) -> usize {
        self.filter_weight.value.shape()[1]
    }

    /// Pre-activations `z[pos, o]` over a `[pos][c]` grid.
    fn pre_activations(&self, grid: &[f64]) -> Vec<f64> {
        let (n, c) = (self.filters(), self.channels());
        let w = self.filter_weight.value.data();
        let b = self.filter_bias.value.data();
        grid.chunks_exact(c)
            .flat_map(|cell| (0..n).map(move |o| b[o] + dot(&w[o * c..(o + 1) * c], cell)))
            .collect()
    }
}

impl ParamSet for FusionParams {
    fn params(&self) -> Vec<&Param> {
        let mut out = vec![&self.filter_weight, &self.filter_bias];
        out.extend(self.classifier.params());
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = vec![&mut self.filter_weight, &mut self.filter_bias];
        out.extend(self.classifier.params_mut());
        out
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `r[p, q, o] = ReLU(b_o + ⟨W_o, ct[p, q, ·]⟩)`.
pub fn channel_fuse(ct: &CorrelationTensor, fp: &FusionParams) -> Result<Tensor> {
    let s = ct.values.shape();
    if s.len() != 3 || s[2] != fp.channels() {
        return Err(Error::ShapeMismatch {
            op: "channel_fuse",
            expected: vec![s[0], s[0], fp.channels()],
            got: s.to_vec(),
        });
    }
    let r = fp.pre_activations(ct.values.data()).into_iter().map(relu).collect();
    Tensor::new(vec![s[0], s[1], fp.filters()], r)
}

/// Flattens `r` row-major over `(p, q, o)`, applies `C_f` and softmax.
pub fn final_classify(r: &Tensor, fp: &FusionParams) -> Result<Tensor> {
    if r.len() != fp.classifier.input_dim() || r.shape().last() != Some(&fp.filters()) {
        return Err(Error::ShapeMismatch {
            op: "final_classify",
            expected: vec![fp.classifier.input_dim()],
            got: r.shape().to_vec(),
        });
    }
    Ok(Tensor::vector(softmax(&fp.classifier.forward(r.data())?)))
}

#[derive(Debug, Clone, PartialEq)]
enum Body {
    Filtered(FusionParams),
    Flat(Linear),
}

/// A trainable fusion stage mapping `ŷ¹..ŷⱽ` to `ŷᶠ`.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionHead {
    mode: FusionMode,
    views: usize,
    classes: usize,
    channels: Vec<(usize, usize)>,
    body: Body,
}

/// Forward intermediates for one sample.
struct HeadTrace {
    input: Vec<f64>,
    pre: Vec<f64>,
    hidden: Vec<f64>,
    probs: Vec<f64>,
}

impl FusionHead {
    /// Parameters are named `{mode}.…`.
    pub fn new(mode: FusionMode, views: usize, classes: usize, filters: usize, rng: &mut impl Rng) -> Result<Self> {
        if views == 0 || classes < 2 {
            return Err(Error::InvalidArgument(format!(
                "fusion head needs V ≥ 1 and K ≥ 2 (got V={views}, K={classes})"
            )));
        }
        if filters == 0 {
            return Err(Error::InvalidArgument("need at least one fusion filter".into()));
        }
        let channels = mode.channel_set().map(|s| channel_map(views, s)).unwrap_or_default();
        let (positions, c) = mode.layout(views, classes);
        if c == 0 {
            return Err(Error::InvalidArgument(format!("{mode} has no channels with {views} view(s)")));
        }
        let prefix = mode.name();
        let body = if mode.uses_filters() {
            Body::Filtered(FusionParams::new(prefix, positions, c, filters, classes, rng))
        } else {
            Body::Flat(Linear::new(&format!("{prefix}.classifier"), positions * c, classes, rng))
        };
        Ok(Self {
            mode,
            views,
            classes,
            channels,
            body,
        })
    }

    pub fn mode(&self) -> FusionMode {
        self.mode
    }

    pub fn views(&self) -> usize {
        self.views
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    /// Correlation channels consumed, empty for label-concatenation modes.
    pub fn channels(&self) -> &[(usize, usize)] {
        &self.channels
    }

    pub fn fusion_params(&self) -> Option<&FusionParams> {
        match &self.body {
            Body::Filtered(fp) => Some(fp),
            Body::Flat(_) => None,
        }
    }

    pub fn fusion_params_mut(&mut self) -> Option<&mut FusionParams> {
        match &mut self.body {
            Body::Filtered(fp) => Some(fp),
            Body::Flat(_) => None,
        }
    }

    fn check(&self, probs: &[&[f64]]) -> Result<()> {
        if probs.len() != self.views {
            return Err(Error::InvalidArgument(format!(
                "expected {} view predictions, got {}",
                self.views,
                probs.len()
            )));
        }
        let k = check_views(probs)?;
        if k != self.classes {
            return Err(Error::ShapeMismatch {
                op: "fusion_head",
                expected: vec![self.classes],
                got: vec![k],
            });
        }
        Ok(())
    }

    fn input(&self, probs: &[&[f64]]) -> Vec<f64> {
        if self.channels.is_empty() {
            probs.concat()
        } else {
            correlation_grid(probs, &self.channels)
        }
    }

    fn trace(&self, probs: &[&[f64]]) -> Result<HeadTrace> {
        self.check(probs)?;
        let input = self.input(probs);
        let (pre, hidden, logits) = match &self.body {
            Body::Filtered(fp) => {
                let pre = fp.pre_activations(&input);
                let hidden: Vec<f64> = pre.iter().map(|&z| relu(z)).collect();
                let logits = fp.classifier.forward(&hidden)?;
                (pre, hidden, logits)
            }
            Body::Flat(lin) => (Vec::new(), Vec::new(), lin.forward(&input)?),
        };
        let probs = softmax(&logits);
        Ok(HeadTrace {
            input,
            pre,
            hidden,
            probs,
        })
    }

    /// `ŷᶠ` for one sample's view predictions.
    pub fn predict(&self, probs: &[&[f64]]) -> Result<Vec<f64>> {
        let p = self.trace(probs)?.probs;
        if p.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("fusion_head"));
        }
        Ok(p)
    }

    /// Accumulates gradients of `scale · CE(ŷᶠ, y)` into the head parameters.
    fn backward(&mut self, t: &HeadTrace, y: usize, scale: f64) {
        let dz: Vec<f64> = softmax_cross_entropy_grad(&t.probs, y).iter().map(|g| g * scale).collect();
        match &mut self.body {
            Body::Flat(lin) => {
                lin.backward(&t.input, &dz);
            }
            Body::Filtered(fp) => {
                let dh = fp.classifier.backward(&t.hidden, &dz);
                let (n, c) = (fp.filters(), fp.channels());
                let dw = fp.filter_weight.grad.data_mut();
                let mut db = vec![0.0; n];
                for (pos, cell) in t.input.chunks_exact(c).enumerate() {
                    for o in 0..n {
                        let g = if t.pre[pos * n + o] > 0.0 { dh[pos * n + o] } else { 0.0 };
                        if g != 0.0 {
                            db[o] += g;
                            for (w, x) in dw[o * c..(o + 1) * c].iter_mut().zip(cell) {
                                *w += g * x;
                            }
                        }
                    }
                }
                fp.filter_bias.accumulate(&db);
            }
        }
    }
}

impl ParamSet for FusionHead {
    fn params(&self) -> Vec<&Param> {
        match &self.body {
            Body::Filtered(fp) => fp.params(),
            Body::Flat(lin) => lin.params(),
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        match &mut self.body {
            Body::Filtered(fp) => fp.params_mut(),
            Body::Flat(lin) => lin.params_mut(),
        }
    }
}

fn check_batch(batch: &[Vec<Vec<f64>>], labels: &[usize], classes: usize) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if batch.len() != labels.len() {
        return Err(Error::InvalidArgument(format!("{} labels for {} samples", labels.len(), batch.len())));
    }
    if let Some(&y) = labels.iter().find(|&&y| y >= classes) {
        return Err(Error::IndexOutOfRange { index: y, len: classes });
    }
    Ok(())
}

fn refs(sample: &[Vec<f64>]) -> Vec<&[f64]> {
    sample.iter().map(|p| p.as_slice()).collect()
}

/// Mean fusion cross-entropy; `batch[i][v]` is view `v`'s prediction for sample `i`.
pub fn fusion_loss(batch: &[Vec<Vec<f64>>], labels: &[usize], head: &FusionHead) -> Result<f64> {
    check_batch(batch, labels, head.classes)?;
    let mut total = 0.0;
    for (s, &y) in batch.iter().zip(labels) {
        total += cross_entropy(&head.trace(&refs(s))?.probs, y)?;
    }
    Ok(total / batch.len() as f64)
}

/// Mean fusion cross-entropy and the fused predictions. Overwrites the head's
/// gradients; the view predictions are plain inputs, so nothing flows upstream.
pub fn fusion_loss_and_grads(
    batch: &[Vec<Vec<f64>>],
    labels: &[usize],
    head: &mut FusionHead,
) -> Result<(f64, Vec<Vec<f64>>)> {
    check_batch(batch, labels, head.classes)?;
    head.zero_grads();
    let scale = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    let mut fused = Vec::with_capacity(batch.len());
    for (s, &y) in batch.iter().zip(labels) {
        let t = head.trace(&refs(s))?;
        loss += cross_entropy(&t.probs, y)?;
        head.backward(&t, y, scale);
        fused.push(t.probs);
    }
    if head.params().iter().any(|p| !p.grad.is_finite()) {
        return Err(Error::NonFinite("fusion_loss_and_grads"));
    }
    Ok((loss * scale, fused))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::correlation::stack_correlations;
    use crate::math::{finite_diff_check, GradCheckOptions};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_simplex(k: usize, rng: &mut impl Rng) -> Vec<f64> {
        let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.01..1.0)).collect();
        let s: f64 = raw.iter().sum();
        raw.iter().map(|x| x / s).collect()
    }

    fn random_batch(n: usize, v: usize, k: usize, rng: &mut impl Rng) -> (Vec<Vec<Vec<f64>>>, Vec<usize>) {
        let batch = (0..n).map(|_| (0..v).map(|_| random_simplex(k, rng)).collect()).collect();
        let labels = (0..n).map(|_| rng.random_range(0..k)).collect();
        (batch, labels)
    }

    fn oracle_fuse(ct: &Tensor, w: &Tensor, b: &Tensor) -> Vec<f64> {
        let s = ct.shape();
        let n = w.shape()[0];
        let mut out = vec![0.0; s[0] * s[1] * n];
        for p in 0..s[0] {
            for q in 0..s[1] {
                for o in 0..n {
                    let mut z = b.data()[o];
                    for c in 0..s[2] {
                        z += w.at(&[o, c]) * ct.at(&[p, q, c]);
                    }
                    out[(p * s[1] + q) * n + o] = z.max(0.0);
                }
            }
        }
        out
    }

    fn probs(rng: &mut impl Rng, v: usize, k: usize) -> Vec<Tensor> {
        (0..v).map(|_| Tensor::vector(random_simplex(k, rng))).collect()
    }

    #[test]
    fn selector_filter_copies_channel() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ct = stack_correlations(&probs(&mut rng, 3, 4)).unwrap();
        let mut fp = FusionParams::new("f", 16, 6, 2, 4, &mut rng);
        fp.filter_weight.value = Tensor::zeros(&[2, 6]);
        fp.filter_weight.value.set(&[1, 4], 1.0);
        fp.filter_bias.value = Tensor::zeros(&[2]);
        let r = channel_fuse(&ct, &fp).unwrap();
        let ch = ct.channel(4);
        for p in 0..4 {
            for q in 0..4 {
                assert_eq!(r.at(&[p, q, 1]), ch.at(&[p, q]));
                assert_eq!(r.at(&[p, q, 0]), 0.0);
            }
        }
    }

    #[test]
    fn negative_bias_clamps_to_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let ct = stack_correlations(&probs(&mut rng, 2, 3)).unwrap();
        let mut fp = FusionParams::new("f", 9, 3, 4, 3, &mut rng);
        fp.filter_weight.value = Tensor::zeros(&[4, 3]);
        fp.filter_bias.value = Tensor::full(&[4], -1.0);
        assert!(channel_fuse(&ct, &fp).unwrap().data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn filter_channel_mismatch_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ct = stack_correlations(&probs(&mut rng, 3, 3)).unwrap();
        let fp = FusionParams::new("f", 9, 5, 2, 3, &mut rng);
        assert!(matches!(channel_fuse(&ct, &fp), Err(Error::ShapeMismatch { .. })));
        let r = Tensor::zeros(&[3, 3, 3]);
        assert!(final_classify(&r, &fp).is_err());
    }

    #[test]
    fn final_classify_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut fp = FusionParams::new("f", 16, 6, 8, 4, &mut rng);
        assert_eq!(fp.classifier.input_dim(), 128);
        fp.classifier = Linear::zeros("f.classifier", 128, 4);
        let r = Tensor::full(&[4, 4, 8], 0.3);
        assert!(final_classify(&r, &fp).unwrap().data().iter().all(|&p| (p - 0.25).abs() < 1e-15));
    }

    #[test]
    fn final_classify_matches_flatten_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let fp = FusionParams::new("f", 9, 3, 2, 3, &mut rng);
        let r = crate::math::init::uniform_fan_in(&[3, 3, 2], 1, &mut rng);
        let got = final_classify(&r, &fp).unwrap();
        let w = &fp.classifier.weight.value;
        let mut logits = fp.classifier.bias.value.data().to_vec();
        for (k, l) in logits.iter_mut().enumerate() {
            for p in 0..3 {
                for q in 0..3 {
                    for o in 0..2 {
                        *l += w.at(&[k, (p * 3 + q) * 2 + o]) * r.at(&[p, q, o]);
                    }
                }
            }
        }
        let m = logits.iter().cloned().fold(f64::MIN, f64::max);
        let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
        let s: f64 = e.iter().sum();
        for (a, b) in got.data().iter().zip(&e) {
            assert!((a - b / s).abs() < 1e-14);
        }
    }

    #[test]
    fn head_modes_have_expected_sizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (v, k, n) = (3, 6, 8);
        let expect_c = [(FusionMode::Complete, 6), (FusionMode::IntraOnly, 3), (FusionMode::InterOnly, 3)];
        for (mode, c) in expect_c {
            let h = FusionHead::new(mode, v, k, n, &mut rng).unwrap();
            assert_eq!(h.fusion_params().unwrap().channels(), c);
            assert_eq!(h.channels().len(), c);
        }
        let h = FusionHead::new(FusionMode::FusionOnly, v, k, n, &mut rng).unwrap();
        assert_eq!(h.fusion_params().unwrap().channels(), 1);
        assert_eq!(h.fusion_params().unwrap().classifier.input_dim(), v * k * n);
        let h = FusionHead::new(FusionMode::NoChannelFusion, v, k, n, &mut rng).unwrap();
        assert_eq!(h.num_weights(), k * k * 6 * k + k);
        let h = FusionHead::new(FusionMode::Concat, v, k, n, &mut rng).unwrap();
        assert_eq!(h.num_weights(), v * k * k + k);
        assert!(FusionHead::new(FusionMode::InterOnly, 1, k, n, &mut rng).is_err());
        assert!(FusionHead::new(FusionMode::Complete, 1, k, n, &mut rng).is_ok());
        for m in FusionMode::ALL {
            assert_eq!(m.name().parse::<FusionMode>().unwrap(), m);
        }
    }

    #[test]
    fn perfect_prediction_has_near_zero_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut h = FusionHead::new(FusionMode::Complete, 2, 3, 2, &mut rng).unwrap();
        let fp = h.fusion_params_mut().unwrap();
        fp.classifier = Linear::zeros("complete.classifier", 9 * 2, 3);
        fp.classifier.bias.value = Tensor::vector(vec![-40.0, 40.0, -40.0]);
        let batch = vec![vec![vec![0.2, 0.5, 0.3], vec![0.1, 0.1, 0.8]]];
        assert!(fusion_loss(&batch, &[1], &h).unwrap() < 1e-11);
    }

    #[test]
    fn empty_batch_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut h = FusionHead::new(FusionMode::Complete, 2, 3, 2, &mut rng).unwrap();
        assert!(matches!(fusion_loss_and_grads(&[], &[], &mut h), Err(Error::EmptyBatch)));
    }

    #[test]
    fn single_view_head_runs() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut h = FusionHead::new(FusionMode::Complete, 1, 3, 2, &mut rng).unwrap();
        let (batch, labels) = random_batch(4, 1, 3, &mut rng);
        let (loss, fused) = fusion_loss_and_grads(&batch, &labels, &mut h).unwrap();
        assert!(loss.is_finite());
        assert_eq!(fused.len(), 4);
    }

    #[test]
    fn gradients_match_finite_differences_for_every_mode() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for mode in FusionMode::ALL {
            let mut h = FusionHead::new(mode, 3, 4, 3, &mut rng).unwrap();
            if let Some(fp) = h.fusion_params_mut() {
                // Push pre-activations away from the ReLU kink.
                fp.filter_bias.value = Tensor::vector(vec![0.05, -0.01, 0.02]);
            }
            let (batch, labels) = random_batch(5, 3, 4, &mut rng);
            fusion_loss_and_grads(&batch, &labels, &mut h).unwrap();
            let r = finite_diff_check(
                &mut h,
                |h| fusion_loss(&batch, &labels, h),
                &GradCheckOptions::default(),
                &mut rng,
            )
            .unwrap();
            assert!(r.max_rel_err() < 1e-4, "{mode}: {:?}", r.worst());
        }
    }

    proptest! {
        #[test]
        fn channel_fuse_matches_oracle(seed in any::<u64>(), v in 1usize..5, k in 2usize..6, n in 1usize..5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let ct = stack_correlations(&probs(&mut rng, v, k)).unwrap();
            let c = ct.num_channels();
            let mut fp = FusionParams::new("f", k * k, c, n, k, &mut rng);
            fp.filter_bias.value = crate::math::init::uniform_fan_in(&[n], 16, &mut rng);
            let r = channel_fuse(&ct, &fp).unwrap();
            let o = oracle_fuse(&ct.values, &fp.filter_weight.value, &fp.filter_bias.value);
            for (a, b) in r.data().iter().zip(&o) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn channel_fuse_is_position_equivariant(seed in any::<u64>(), k in 2usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let ct = stack_correlations(&probs(&mut rng, 3, k)).unwrap();
            let fp = FusionParams::new("f", k * k, 6, 3, k, &mut rng);
            let mut perm: Vec<usize> = (0..k * k).collect();
            for i in (1..perm.len()).rev() {
                perm.swap(i, rng.random_range(0..=i));
            }
            let src = ct.values.data();
            let moved: Vec<f64> = perm.iter().flat_map(|&pos| src[pos * 6..(pos + 1) * 6].iter().copied()).collect();
            let ct2 = CorrelationTensor { values: Tensor::new(vec![k, k, 6], moved).unwrap(), channels: ct.channels.clone() };
            let r1 = channel_fuse(&ct, &fp).unwrap();
            let r2 = channel_fuse(&ct2, &fp).unwrap();
            for (new_pos, &pos) in perm.iter().enumerate() {
                prop_assert_eq!(&r2.data()[new_pos * 3..new_pos * 3 + 3], &r1.data()[pos * 3..pos * 3 + 3]);
            }
        }

        #[test]
        fn fused_output_is_a_distribution(seed in any::<u64>(), mode_idx in 0usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let h = FusionHead::new(FusionMode::ALL[mode_idx], 3, 5, 4, &mut rng).unwrap();
            let (batch, _) = random_batch(1, 3, 5, &mut rng);
            let p = h.predict(&refs(&batch[0])).unwrap();
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn view_relabeling_with_reindexed_filters_keeps_diagonal(seed in any::<u64>(), perm_idx in 0usize..6) {
            let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
            let perm = perms[perm_idx];
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let k = 4;
            let pr = probs(&mut rng, 3, k);
            let old = stack_correlations(&pr).unwrap();
            let new = stack_correlations(&perm.iter().map(|&v| pr[v].clone()).collect::<Vec<_>>()).unwrap();
            let fp = FusionParams::new("f", k * k, 6, 3, k, &mut rng);
            let mut fp2 = fp.clone();
            for (c, &(a, b)) in new.channels.iter().enumerate() {
                let (u, w) = (perm[a].min(perm[b]), perm[a].max(perm[b]));
                let src = old.channels.iter().position(|&x| x == (u, w)).unwrap();
                for o in 0..3 {
                    fp2.filter_weight.value.set(&[o, c], fp.filter_weight.value.at(&[o, src]));
                }
            }
            let r1 = channel_fuse(&old, &fp).unwrap();
            let r2 = channel_fuse(&new, &fp2).unwrap();
            // A reversed view pair transposes its channel, which only the diagonal ignores.
            let order_kept = new.channels.iter().all(|&(a, b)| perm[a] <= perm[b]);
            for p in 0..k {
                for q in 0..k {
                    for o in 0..3 {
                        if p == q || order_kept {
                            prop_assert!((r1.at(&[p, q, o]) - r2.at(&[p, q, o])).abs() < 1e-15);
                        }
                    }
                }
            }
        }
    }
}
