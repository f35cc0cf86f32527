use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::fusion::{FusionMode, DEFAULT_FILTERS};
use crate::math::AdamConfig;

/// Training hyperparameters. Also the schema of the flat config file; every
/// key is optional except `steps`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Total steps `S`.
    pub steps: usize,
    /// View-only steps `S₀` before fusion training starts; 20% of `S` when absent.
    #[serde(default)]
    pub warmup_steps: Option<usize>,
    #[serde(default = "defaults::batch_size")]
    pub batch_size: usize,
    #[serde(default = "defaults::learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "defaults::beta1")]
    pub beta1: f64,
    #[serde(default = "defaults::beta2")]
    pub beta2: f64,
    #[serde(default = "defaults::adam_eps")]
    pub adam_eps: f64,
    #[serde(default)]
    pub seed: u64,
    /// LSTM width `d_global`.
    #[serde(default = "defaults::hidden")]
    pub hidden: usize,
    #[serde(default = "defaults::conv_channels")]
    pub conv_channels: Vec<usize>,
    #[serde(default = "defaults::kernel_sizes")]
    pub kernel_sizes: Vec<usize>,
    /// Number of 1×1 fusion filters `N_k`.
    #[serde(default = "defaults::filters")]
    pub filters: usize,
    /// Steps between held-out evaluations; the last step is always evaluated.
    #[serde(default = "defaults::eval_interval")]
    pub eval_interval: usize,
    /// Share of the dataset, taken from the end, held out for evaluation.
    #[serde(default = "defaults::test_fraction")]
    pub test_fraction: f64,
    /// Fusion heads trained side by side; the first selects the best checkpoint.
    #[serde(default = "defaults::heads")]
    pub heads: Vec<FusionMode>,
    /// Standardize each feature with training-split statistics.
    #[serde(default = "defaults::standardize")]
    pub standardize: bool,
}

mod defaults {
    use super::*;

    pub fn batch_size() -> usize {
        32
    }
    pub fn learning_rate() -> f64 {
        AdamConfig::default().lr
    }
    pub fn beta1() -> f64 {
        AdamConfig::default().beta1
    }
    pub fn beta2() -> f64 {
        AdamConfig::default().beta2
    }
    pub fn adam_eps() -> f64 {
        AdamConfig::default().eps
    }
    pub fn hidden() -> usize {
        EncoderConfig::default().hidden
    }
    pub fn conv_channels() -> Vec<usize> {
        EncoderConfig::default().conv_channels
    }
    pub fn kernel_sizes() -> Vec<usize> {
        EncoderConfig::default().kernel_sizes
    }
    pub fn filters() -> usize {
        DEFAULT_FILTERS
    }
    pub fn eval_interval() -> usize {
        100
    }
    pub fn test_fraction() -> f64 {
        0.2
    }
    pub fn heads() -> Vec<FusionMode> {
        vec![FusionMode::Complete, FusionMode::Concat]
    }
    pub fn standardize() -> bool {
        true
    }
}

impl TrainConfig {
    /// Defaults for everything but the step count.
    pub fn with_steps(steps: usize) -> Self {
        toml::from_str(&format!("steps = {steps}")).expect("defaults parse")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn warmup(&self) -> usize {
        self.warmup_steps.unwrap_or(self.steps / 5)
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
        }
    }

    pub fn encoder(&self) -> EncoderConfig {
        EncoderConfig {
            hidden: self.hidden,
            conv_channels: self.conv_channels.clone(),
            kernel_sizes: self.kernel_sizes.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.warmup() > self.steps {
            return fail(format!("warmup_steps {} exceeds steps {}", self.warmup(), self.steps));
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1".into());
        }
        if self.eval_interval == 0 {
            return fail("eval_interval must be at least 1".into());
        }
        if self.filters == 0 {
            return fail("filters must be at least 1".into());
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return fail(format!("test_fraction {} outside (0, 1)", self.test_fraction));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return fail(format!("learning_rate {} must be positive", self.learning_rate));
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2) && self.adam_eps > 0.0) {
            return fail("Adam betas must lie in [0, 1) and eps be positive".into());
        }
        if self.heads.is_empty() {
            return fail("at least one fusion head is required".into());
        }
        let mut seen = self.heads.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.heads.len() {
            return fail("fusion heads must be distinct".into());
        }
        if self.hidden == 0 || self.conv_channels.is_empty() || self.conv_channels.len() != self.kernel_sizes.len() {
            return fail("need hidden ≥ 1 and one kernel size per conv layer".into());
        }
        Ok(())
    }

    /// Config text with every default spelled out.
    pub fn canonical(&self) -> String {
        let mut resolved = self.clone();
        resolved.warmup_steps = Some(self.warmup());
        toml::to_string(&resolved).expect("config serializes")
    }

    /// First 8 bytes of SHA-256 over [`Self::canonical`], hex encoded.
    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(self.canonical().as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}
