use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::report::EvalReport;
use crate::data::MultiViewDataset;
use crate::error::{Error, Result};
use crate::fusion::FusionMode;
use crate::train::{train_loop, TrainConfig, TrainOutcome};

/// Fusion variants compared in an ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationMode {
    IntraOnly,
    InterOnly,
    FusionOnly,
    NoChannelFusion,
    Complete,
}

impl AblationMode {
    pub const ALL: [AblationMode; 5] = [
        AblationMode::IntraOnly,
        AblationMode::InterOnly,
        AblationMode::FusionOnly,
        AblationMode::NoChannelFusion,
        AblationMode::Complete,
    ];

    pub fn fusion_mode(self) -> FusionMode {
        match self {
            AblationMode::IntraOnly => FusionMode::IntraOnly,
            AblationMode::InterOnly => FusionMode::InterOnly,
            AblationMode::FusionOnly => FusionMode::FusionOnly,
            AblationMode::NoChannelFusion => FusionMode::NoChannelFusion,
            AblationMode::Complete => FusionMode::Complete,
        }
    }

    pub fn name(self) -> &'static str {
        self.fusion_mode().name()
    }
}

impl fmt::Display for AblationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AblationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AblationMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown ablation mode `{s}`")))
    }
}

/// Config of the equivalent single-mode run, whose fingerprint labels the report.
pub fn single_mode_config(cfg: &TrainConfig, mode: AblationMode, seed: u64) -> TrainConfig {
    TrainConfig {
        heads: vec![mode.fusion_mode()],
        seed,
        ..cfg.clone()
    }
}

/// Report for `mode` at the evaluation where its fused accuracy peaked; ties keep the earlier step.
pub fn best_report(out: &TrainOutcome, mode: AblationMode, fingerprint: &str, seed: u64) -> Result<EvalReport> {
    let name = mode.name();
    let mut best = None;
    for rec in &out.log {
        let acc = *rec
            .fused_accuracy
            .get(name)
            .ok_or_else(|| Error::InvalidArgument(format!("run has no `{name}` head")))?;
        if best.is_none_or(|(b, _)| acc > b) {
            best = Some((acc, rec));
        }
    }
    let (_, rec) = best.ok_or(Error::EmptyBatch)?;
    EvalReport::from_record(rec, name, fingerprint, seed)
}

/// Trains `mode` alone with `seed` and reports its best held-out evaluation.
pub fn ablation_run(ds: &MultiViewDataset, cfg: &TrainConfig, mode: AblationMode, seed: u64) -> Result<EvalReport> {
    let suite = ablation_suite(ds, cfg, &[mode], &[seed])?;
    Ok(suite.runs.into_iter().next().expect("one run"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSummary {
    pub mean_accuracy: f64,
    /// Accuracies in seed order.
    pub accuracies: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub seeds: Vec<u64>,
    /// One report per (seed, mode), seeds outermost.
    pub runs: Vec<EvalReport>,
    pub summary: BTreeMap<String, ModeSummary>,
}

impl AblationReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn mean(&self, mode: AblationMode) -> Option<f64> {
        self.summary.get(mode.name()).map(|s| s.mean_accuracy)
    }
}

/// Runs every mode under every seed.
///
/// The modes of one seed share a single training run: each head draws from its
/// own random stream and never feeds back into the encoders, so the result per
/// mode is the same as training it alone.
pub fn ablation_suite(ds: &MultiViewDataset, cfg: &TrainConfig, modes: &[AblationMode], seeds: &[u64]) -> Result<AblationReport> {
    if modes.is_empty() || seeds.is_empty() {
        return Err(Error::InvalidArgument("ablation needs at least one mode and one seed".into()));
    }
    let mut distinct = modes.to_vec();
    distinct.sort();
    distinct.dedup();
    if distinct.len() != modes.len() {
        return Err(Error::InvalidArgument("ablation modes must be distinct".into()));
    }
    let mut runs = Vec::with_capacity(modes.len() * seeds.len());
    for &seed in seeds {
        let joint = TrainConfig {
            heads: modes.iter().map(|m| m.fusion_mode()).collect(),
            seed,
            ..cfg.clone()
        };
        let out = train_loop(ds, &joint)?;
        for &mode in modes {
            let fp = single_mode_config(cfg, mode, seed).fingerprint();
            runs.push(best_report(&out, mode, &fp, seed)?);
        }
    }
    let summary = modes
        .iter()
        .map(|&m| {
            let accuracies: Vec<f64> = runs.iter().filter(|r| r.method == m.name()).map(|r| r.fused_accuracy).collect();
            let mean_accuracy = accuracies.iter().sum::<f64>() / accuracies.len() as f64;
            (m.name().to_string(), ModeSummary { mean_accuracy, accuracies })
        })
        .collect();
    Ok(AblationReport {
        seeds: seeds.to_vec(),
        runs,
        summary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_generate, SynthConfig};

    fn tiny() -> (MultiViewDataset, TrainConfig) {
        let ds = synth_generate(&SynthConfig {
            classes: 3,
            views: 2,
            samples: 30,
            length: 6,
            dims: vec![2, 2],
            noise: 0.3,
            confusions: "0-1".parse().unwrap(),
            seed: 5,
            ..SynthConfig::benchmark(0.0, 0)
        })
        .unwrap()
        .dataset;
        let cfg = TrainConfig {
            hidden: 2,
            conv_channels: vec![2],
            kernel_sizes: vec![2],
            filters: 2,
            batch_size: 4,
            eval_interval: 2,
            learning_rate: 1e-2,
            ..TrainConfig::with_steps(6)
        };
        (ds, cfg)
    }

    #[test]
    fn names_round_trip() {
        for m in AblationMode::ALL {
            assert_eq!(m.name().parse::<AblationMode>().unwrap(), m);
        }
        assert!("concat".parse::<AblationMode>().is_err());
    }

    #[test]
    fn joint_suite_matches_separate_runs() {
        let (ds, cfg) = tiny();
        let modes = [AblationMode::Complete, AblationMode::IntraOnly, AblationMode::NoChannelFusion];
        let suite = ablation_suite(&ds, &cfg, &modes, &[7, 8]).unwrap();
        assert_eq!(suite.runs.len(), 6);
        for r in &suite.runs {
            let alone = ablation_run(&ds, &cfg, r.method.parse().unwrap(), r.seed).unwrap();
            assert_eq!(&alone, r);
        }
        let complete = &suite.summary["complete"];
        assert_eq!(complete.accuracies.len(), 2);
        assert_eq!(complete.mean_accuracy, (complete.accuracies[0] + complete.accuracies[1]) / 2.0);
    }

    #[test]
    fn rejects_bad_requests() {
        let (ds, cfg) = tiny();
        assert!(ablation_suite(&ds, &cfg, &[], &[1]).is_err());
        assert!(ablation_suite(&ds, &cfg, &[AblationMode::Complete], &[]).is_err());
        assert!(ablation_suite(&ds, &cfg, &[AblationMode::Complete, AblationMode::Complete], &[1]).is_err());
    }
}
