use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::Tensor;

/// Tolerance on `|Σp − 1|` for a vector to count as a probability vector.
pub const PROB_TOL: f64 = 1e-6;

pub fn check_probability(p: &[f64]) -> Result<()> {
    if p.is_empty() {
        return Err(Error::NotProbability("empty vector".into()));
    }
    if let Some(x) = p.iter().find(|x| !x.is_finite() || **x < 0.0) {
        return Err(Error::NotProbability(format!("entry {x}")));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > PROB_TOL {
        return Err(Error::NotProbability(format!("sums to {s}")));
    }
    Ok(())
}

fn outer(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().flat_map(|&x| b.iter().map(move |&y| x * y)).collect()
}

fn as_prob_vector<'a>(p: &'a Tensor, op: &'static str) -> Result<&'a [f64]> {
    if p.rank() != 1 {
        return Err(Error::ShapeMismatch {
            op,
            expected: vec![p.len()],
            got: p.shape().to_vec(),
        });
    }
    check_probability(p.data())?;
    Ok(p.data())
}

/// `ŷᵛ ŷᵛᵀ`.
pub fn intra_matrix(p: &Tensor) -> Result<Tensor> {
    let p = as_prob_vector(p, "intra_matrix")?;
    Tensor::matrix(p.len(), p.len(), outer(p, p))
}

/// `ŷᵘ ŷʷᵀ`.
pub fn inter_matrix(pu: &Tensor, pw: &Tensor) -> Result<Tensor> {
    let a = as_prob_vector(pu, "inter_matrix")?;
    let b = as_prob_vector(pw, "inter_matrix")?;
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch {
            op: "inter_matrix",
            expected: vec![a.len()],
            got: vec![b.len()],
        });
    }
    Tensor::matrix(a.len(), a.len(), outer(a, b))
}

/// Which correlation channels to stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelSet {
    All,
    IntraOnly,
    InterOnly,
}

/// Ordered `(u, w)` view pairs (0-based): intra `(v, v)` first, then `u < w` lexicographic.
pub fn channel_map(views: usize, set: ChannelSet) -> Vec<(usize, usize)> {
    let intra = (0..views).map(|v| (v, v));
    let inter = (0..views).flat_map(move |u| (u + 1..views).map(move |w| (u, w)));
    match set {
        ChannelSet::All => intra.chain(inter).collect(),
        ChannelSet::IntraOnly => intra.collect(),
        ChannelSet::InterOnly => inter.collect(),
    }
}

pub fn channel_count(views: usize, set: ChannelSet) -> usize {
    let inter = views * views.saturating_sub(1) / 2;
    match set {
        ChannelSet::All => views + inter,
        ChannelSet::IntraOnly => views,
        ChannelSet::InterOnly => inter,
    }
}

/// Stacked correlation channels, `values[p, q, c]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationTensor {
    pub values: Tensor,
    pub channels: Vec<(usize, usize)>,
}

impl CorrelationTensor {
    pub fn classes(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    /// Channel `c` as a `K×K` matrix.
    pub fn channel(&self, c: usize) -> Tensor {
        let k = self.classes();
        let n = self.num_channels();
        let data = (0..k * k).map(|pq| self.values.data()[pq * n + c]).collect();
        Tensor::matrix(k, k, data).expect("square")
    }
}

/// Flat `[p][q][c]` grid for validated probability vectors.
pub(crate) fn correlation_grid(probs: &[&[f64]], channels: &[(usize, usize)]) -> Vec<f64> {
    let k = probs[0].len();
    let mut out = Vec::with_capacity(k * k * channels.len());
    for p in 0..k {
        for q in 0..k {
            out.extend(channels.iter().map(|&(u, w)| probs[u][p] * probs[w][q]));
        }
    }
    out
}

pub(crate) fn check_views(probs: &[&[f64]]) -> Result<usize> {
    let first = probs.first().ok_or_else(|| Error::InvalidArgument("need at least one view".into()))?;
    let k = first.len();
    for p in probs {
        if p.len() != k {
            return Err(Error::ShapeMismatch {
                op: "stack_correlations",
                expected: vec![k],
                got: vec![p.len()],
            });
        }
        check_probability(p)?;
    }
    Ok(k)
}

/// All `V + V(V−1)/2` channels.
pub fn stack_correlations(probs: &[Tensor]) -> Result<CorrelationTensor> {
    stack_channels(probs, ChannelSet::All)
}

pub fn stack_channels(probs: &[Tensor], set: ChannelSet) -> Result<CorrelationTensor> {
    let refs: Vec<&[f64]> = probs.iter().map(|p| p.data()).collect();
    if let Some(p) = probs.iter().find(|p| p.rank() != 1) {
        return Err(Error::ShapeMismatch {
            op: "stack_correlations",
            expected: vec![p.len()],
            got: p.shape().to_vec(),
        });
    }
    let k = check_views(&refs)?;
    let channels = channel_map(probs.len(), set);
    if channels.is_empty() {
        return Err(Error::InvalidArgument(format!("{set:?} has no channels for {} view(s)", probs.len())));
    }
    let values = Tensor::new(vec![k, k, channels.len()], correlation_grid(&refs, &channels))?;
    Ok(CorrelationTensor { values, channels })
}
