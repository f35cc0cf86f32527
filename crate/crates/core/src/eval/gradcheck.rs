//! Finite-difference check of the whole network at toy size.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{synth_generate, SynthConfig};
use crate::encoder::{predict_batch, view_loss, view_loss_and_grads, EncoderConfig, ViewEncoderParams};
use crate::error::Result;
use crate::fusion::{fusion_loss, fusion_loss_and_grads, FusionHead, FusionMode};
use crate::math::{finite_diff_check, GradCheckOptions, GradCheckReport};

/// Relative error every checked coordinate must stay below.
pub const GRADCHECK_TOL: f64 = 1e-4;

/// Shape of the checked network.
#[derive(Debug, Clone)]
pub struct GradCheckSetup {
    pub views: usize,
    pub classes: usize,
    pub seq_len: usize,
    pub dim: usize,
    pub batch: usize,
    pub encoder: EncoderConfig,
    pub filters: usize,
}

impl Default for GradCheckSetup {
    fn default() -> Self {
        Self {
            views: 3,
            classes: 4,
            seq_len: 8,
            dim: 3,
            batch: 6,
            encoder: EncoderConfig {
                hidden: 4,
                conv_channels: vec![4, 4],
                kernel_sizes: vec![3, 3],
            },
            filters: 2,
        }
    }
}

/// Checks every view encoder against its own loss on a train-mode batch and
/// every fusion head against the fusion loss on that batch's view predictions.
pub fn run_full_gradcheck(seed: u64, eps: f64) -> Result<GradCheckReport> {
    run_gradcheck(&GradCheckSetup::default(), seed, eps)
}

pub fn run_gradcheck(setup: &GradCheckSetup, seed: u64, eps: f64) -> Result<GradCheckReport> {
    let ds = synth_generate(&SynthConfig {
        classes: setup.classes,
        views: setup.views,
        samples: setup.batch,
        length: setup.seq_len,
        dims: vec![setup.dim; setup.views],
        noise: 0.5,
        confusions: Default::default(),
        seed,
        ..SynthConfig::benchmark(0.0, seed)
    })?
    .dataset;
    let labels = ds.labels();
    let opts = GradCheckOptions {
        eps,
        ..GradCheckOptions::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradCheckReport::default();

    let mut view_probs = vec![Vec::with_capacity(setup.views); ds.len()];
    for v in 0..setup.views {
        let mut enc = ViewEncoderParams::new(v, setup.dim, setup.seq_len, setup.classes, &setup.encoder, &mut rng)?;
        let xs = ds.view_all(v);
        view_loss_and_grads(&xs, &labels, &mut enc)?;
        report.merge(finite_diff_check(&mut enc, |p| view_loss(&xs, &labels, p), &opts, &mut rng)?);
        for (slot, p) in view_probs.iter_mut().zip(predict_batch(&xs, &enc)?) {
            slot.push(p);
        }
    }
    for mode in FusionMode::ALL {
        let mut head = FusionHead::new(mode, setup.views, setup.classes, setup.filters, &mut rng)?;
        fusion_loss_and_grads(&view_probs, &labels, &mut head)?;
        report.merge(finite_diff_check(&mut head, |h| fusion_loss(&view_probs, &labels, h), &opts, &mut rng)?);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn covers_every_parameter_group() {
        let report = run_full_gradcheck(0, 1e-5).unwrap();
        for v in 0..3 {
            for part in ["lstm", "attention", "tcn0", "tcn1", "classifier"] {
                let prefix = format!("view{v}.{part}");
                assert!(report.params.iter().any(|p| p.name.starts_with(&prefix)), "{prefix} unchecked");
            }
        }
        assert!(report.params.iter().any(|p| p.name.starts_with("complete.filter")));
        for p in &report.params {
            assert_eq!(p.checked, p.size.min(20), "{}", p.name);
        }
        assert!(report.max_rel_err() < GRADCHECK_TOL, "{:?}", report.worst());
    }
}
