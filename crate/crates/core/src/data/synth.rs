//! Synthetic multi-view benchmark with complementary views.
//!
//! Every view assigns each class a sinusoid-mixture signature; classes joined
//! by a view's confusion pairs share one signature in that view. Samples are
//! signature plus i.i.d. Gaussian noise, drawn from a ChaCha8 stream seeded by
//! `seed`. Values are rounded to f32 so the container round trip is exact.

use std::f64::consts::TAU;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::dataset::{MultiViewDataset, Sample};
use crate::error::{Error, Result};
use crate::math::Tensor;

/// Per-view lists of class pairs the view cannot tell apart.
///
/// Text form: views separated by `/`, pairs by `,`, classes by `-`, e.g.
/// `0-1/2-3/4-5`. An empty field means the view separates every class.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ConfusionSpec(pub Vec<Vec<(usize, usize)>>);

impl ConfusionSpec {
    /// Union-find class groups of view `v`; each group lists its classes ascending.
    pub fn groups(&self, v: usize, classes: usize) -> Vec<Vec<usize>> {
        let mut parent: Vec<usize> = (0..classes).collect();
        fn root(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for &(a, b) in self.0.get(v).map(Vec::as_slice).unwrap_or(&[]) {
            let (ra, rb) = (root(&mut parent, a), root(&mut parent, b));
            parent[ra.max(rb)] = ra.min(rb);
        }
        let mut groups: Vec<Vec<usize>> = Vec::new();
        let mut index = vec![usize::MAX; classes];
        for c in 0..classes {
            let r = root(&mut parent, c);
            if index[r] == usize::MAX {
                index[r] = groups.len();
                groups.push(Vec::new());
            }
            groups[index[r]].push(c);
        }
        groups
    }

    /// Group index of each class in view `v`.
    pub fn group_of(&self, v: usize, classes: usize) -> Vec<usize> {
        let mut out = vec![0; classes];
        for (g, members) in self.groups(v, classes).iter().enumerate() {
            for &c in members {
                out[c] = g;
            }
        }
        out
    }

    pub fn validate(&self, classes: usize, views: usize) -> Result<()> {
        if self.0.len() > views {
            return Err(Error::Config(format!(
                "confusion spec lists {} views but there are {views}",
                self.0.len()
            )));
        }
        for (v, pairs) in self.0.iter().enumerate() {
            for &(a, b) in pairs {
                if a >= classes || b >= classes || a == b {
                    return Err(Error::Config(format!("view {v}: invalid confusion pair {a}-{b} for K={classes}")));
                }
            }
        }
        let maps: Vec<Vec<usize>> = (0..views).map(|v| self.group_of(v, classes)).collect();
        for a in 0..classes {
            for b in a + 1..classes {
                if maps.iter().all(|m| m[a] == m[b]) {
                    return Err(Error::Config(format!("classes {a} and {b} are indistinguishable in every view")));
                }
            }
        }
        Ok(())
    }
}

impl fmt::Display for ConfusionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let views: Vec<String> = self
            .0
            .iter()
            .map(|pairs| pairs.iter().map(|(a, b)| format!("{a}-{b}")).collect::<Vec<_>>().join(","))
            .collect();
        f.write_str(&views.join("/"))
    }
}

impl FromStr for ConfusionSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.is_empty() {
            return Ok(Self::default());
        }
        let parse_class = |t: &str| {
            t.trim()
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("bad class index `{t}` in confusion spec")))
        };
        s.split('/')
            .map(|view| {
                view.split(',')
                    .map(str::trim)
                    .filter(|p| !p.is_empty())
                    .map(|pair| {
                        let (a, b) = pair
                            .split_once('-')
                            .ok_or_else(|| Error::Config(format!("confusion pair `{pair}` is not `a-b`")))?;
                        Ok((parse_class(a)?, parse_class(b)?))
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()
            .map(Self)
    }
}

impl Serialize for ConfusionSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for ConfusionSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Generator settings; also the schema of the flat synth config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub classes: usize,
    pub views: usize,
    pub samples: usize,
    pub length: usize,
    /// Width of each view.
    pub dims: Vec<usize>,
    /// Standard deviation of the additive noise.
    pub noise: f64,
    #[serde(default)]
    pub confusions: ConfusionSpec,
    pub seed: u64,
    /// Sinusoids per signature feature.
    #[serde(default = "default_components")]
    pub components: usize,
    /// Frequency range in cycles per sequence.
    #[serde(default = "default_freq")]
    pub freq_range: (f64, f64),
    #[serde(default = "default_amp")]
    pub amp_range: (f64, f64),
}

fn default_components() -> usize {
    2
}

fn default_freq() -> (f64, f64) {
    (0.5, 4.0)
}

fn default_amp() -> (f64, f64) {
    (0.5, 1.0)
}

impl SynthConfig {
    /// The benchmark used for the fusion acceptance runs: K=6, V=3, T=32,
    /// Dᵛ=8, 3000 train + 600 test samples. View 0 confuses classes 0 and 1,
    /// views 1 and 2 each confuse two pairs, and every pair is resolved by
    /// some other view.
    pub fn benchmark(noise: f64, seed: u64) -> Self {
        Self {
            classes: 6,
            views: 3,
            samples: 3600,
            length: 32,
            dims: vec![8; 3],
            noise,
            confusions: "0-1/2-3,4-5/0-1,2-3".parse().expect("valid literal"),
            seed,
            components: default_components(),
            freq_range: default_freq(),
            amp_range: default_amp(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 || self.views == 0 || self.samples == 0 || self.length == 0 {
            return Err(Error::Config(format!(
                "need K ≥ 2 and V, N, T ≥ 1 (K={}, V={}, N={}, T={})",
                self.classes, self.views, self.samples, self.length
            )));
        }
        if self.dims.len() != self.views || self.dims.contains(&0) {
            return Err(Error::Config(format!(
                "dims {:?} must list {} positive widths",
                self.dims, self.views
            )));
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return Err(Error::Config(format!("noise {} must be finite and ≥ 0", self.noise)));
        }
        let (f0, f1) = self.freq_range;
        let (a0, a1) = self.amp_range;
        if self.components == 0 || !(0.0 <= f0 && f0 <= f1 && f1.is_finite()) || !(0.0 <= a0 && a0 <= a1 && a1.is_finite()) {
            return Err(Error::Config("bad signature ranges".into()));
        }
        self.confusions.validate(self.classes, self.views)
    }
}

/// A generated dataset with the signatures it was drawn from.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub dataset: MultiViewDataset,
    /// `signatures[v][c]`, `[T, Dᵛ]`.
    pub signatures: Vec<Vec<Tensor>>,
}

fn uniform(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

fn signature(cfg: &SynthConfig, d: usize, rng: &mut impl Rng) -> Tensor {
    let t = cfg.length;
    let mut data = vec![0.0; t * d];
    for j in 0..d {
        for _ in 0..cfg.components {
            let f = uniform(rng, cfg.freq_range);
            let a = uniform(rng, cfg.amp_range);
            let phase = rng.random_range(0.0..TAU);
            for step in 0..t {
                data[step * d + j] += a * (TAU * f * step as f64 / t as f64 + phase).sin();
            }
        }
    }
    Tensor::matrix(t, d, data).expect("sized")
}

fn round_f32(x: f64) -> f64 {
    x as f32 as f64
}

pub fn synth_generate(cfg: &SynthConfig) -> Result<SynthDataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut signatures = Vec::with_capacity(cfg.views);
    for (v, &d) in cfg.dims.iter().enumerate() {
        let groups = cfg.confusions.groups(v, cfg.classes);
        let shared: Vec<Tensor> = groups.iter().map(|_| signature(cfg, d, &mut rng)).collect();
        let of = cfg.confusions.group_of(v, cfg.classes);
        signatures.push(of.iter().map(|&g| shared[g].map(round_f32)).collect::<Vec<_>>());
    }

    let mut labels: Vec<usize> = (0..cfg.samples).map(|i| i % cfg.classes).collect();
    labels.shuffle(&mut rng);
    let noise = Normal::new(0.0, cfg.noise).map_err(|e| Error::Config(e.to_string()))?;
    let mut samples = Vec::with_capacity(cfg.samples);
    for &y in &labels {
        let mut views = Vec::with_capacity(cfg.views);
        for sig in &signatures {
            let s = &sig[y];
            let data = s.data().iter().map(|m| round_f32(m + noise.sample(&mut rng))).collect();
            views.push(Tensor::new(s.shape().to_vec(), data)?);
        }
        samples.push(Sample { views, label: y });
    }
    let dataset = MultiViewDataset::new(cfg.classes, cfg.length, cfg.dims.clone(), samples)?;
    Ok(SynthDataset { dataset, signatures })
}

fn sq_dist(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Class whose signatures are nearest (summed squared distance over `views`);
/// ties go to the lowest class index.
pub fn nearest_signature_predict(sample: &Sample, signatures: &[Vec<Tensor>], views: &[usize]) -> usize {
    let classes = signatures[0].len();
    let mut best = (0, f64::INFINITY);
    for c in 0..classes {
        let d: f64 = views.iter().map(|&v| sq_dist(&sample.views[v], &signatures[v][c])).sum();
        if d < best.1 {
            best = (c, d);
        }
    }
    best.0
}

/// Accuracy of the nearest-signature rule restricted to `views`.
pub fn oracle_accuracy(ds: &MultiViewDataset, signatures: &[Vec<Tensor>], views: &[usize]) -> f64 {
    let hits = ds
        .samples()
        .iter()
        .filter(|s| nearest_signature_predict(s, signatures, views) == s.label)
        .count();
    hits as f64 / ds.len() as f64
}
