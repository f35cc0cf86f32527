use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use crate::data::{MultiViewDataset, Standardizer};
use crate::encoder::{predict_batch, view_loss_and_grads, ViewEncoderParams, ViewForward};
use crate::error::{Error, Result};
use crate::eval::baseline::{average_fusion, max_fusion};
use crate::eval::metrics::{accuracy, confusion, predictions, Confusion};
use crate::fusion::{fusion_loss_and_grads, FusionHead, FusionMode};
use crate::math::{adam_step, AdamState, ParamSet};

/// Independent ChaCha8 stream `stream` of the run seed.
pub(crate) fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const VIEW_STREAM: u64 = 1;
const HEAD_STREAM: u64 = 100;
const SAMPLER_STREAM: u64 = 1000;

fn head_stream(mode: FusionMode) -> u64 {
    HEAD_STREAM + FusionMode::ALL.iter().position(|&m| m == mode).expect("listed") as u64
}

/// Encoders, fusion heads and the input standardization they expect.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub classes: usize,
    pub seq_len: usize,
    pub encoders: Vec<ViewEncoderParams>,
    pub heads: Vec<FusionHead>,
    pub standardizer: Standardizer,
}

/// Per-sample outputs of every predictor in a model.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    /// `views[v][i]`.
    pub views: Vec<Vec<Vec<f64>>>,
    /// Fused outputs keyed by method: each head's mode name, `average` and `max`.
    pub fused: BTreeMap<String, Vec<Vec<f64>>>,
}

impl Model {
    /// Initializes every parameter from `cfg.seed`; each view and head draws
    /// from its own stream, so adding a head never changes the others.
    pub fn new(dims: &[usize], seq_len: usize, classes: usize, cfg: &TrainConfig, standardizer: Standardizer) -> Result<Self> {
        cfg.validate()?;
        if standardizer.dims() != dims {
            return Err(Error::ShapeMismatch {
                op: "Model::new",
                expected: dims.to_vec(),
                got: standardizer.dims(),
            });
        }
        let enc = cfg.encoder();
        let encoders = dims
            .iter()
            .enumerate()
            .map(|(v, &d)| {
                let mut rng = stream_rng(cfg.seed, VIEW_STREAM + v as u64);
                ViewEncoderParams::new(v, d, seq_len, classes, &enc, &mut rng)
            })
            .collect::<Result<Vec<_>>>()?;
        let heads = cfg
            .heads
            .iter()
            .map(|&mode| {
                let mut rng = stream_rng(cfg.seed, head_stream(mode));
                FusionHead::new(mode, dims.len(), classes, cfg.filters, &mut rng)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            classes,
            seq_len,
            encoders,
            heads,
            standardizer,
        })
    }

    pub fn views(&self) -> usize {
        self.encoders.len()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.encoders.iter().map(|e| e.input_dim()).collect()
    }

    pub fn head(&self, mode: FusionMode) -> Option<&FusionHead> {
        self.heads.iter().find(|h| h.mode() == mode)
    }

    pub fn check_dataset(&self, ds: &MultiViewDataset) -> Result<()> {
        if ds.dims() != self.dims() || ds.seq_len() != self.seq_len || ds.classes() != self.classes {
            return Err(Error::InvalidArgument(format!(
                "dataset (dims {:?}, T={}, K={}) does not match model (dims {:?}, T={}, K={})",
                ds.dims(),
                ds.seq_len(),
                ds.classes(),
                self.dims(),
                self.seq_len,
                self.classes
            )));
        }
        Ok(())
    }

    /// Predictions on raw (unstandardized) data.
    pub fn predict(&self, ds: &MultiViewDataset) -> Result<Predictions> {
        self.check_dataset(ds)?;
        self.predict_prepared(&self.standardizer.apply(ds)?)
    }

    /// Predictions on data already passed through the model's standardizer.
    pub fn predict_prepared(&self, ds: &MultiViewDataset) -> Result<Predictions> {
        let views = self
            .encoders
            .iter()
            .enumerate()
            .map(|(v, enc)| predict_batch(&ds.view_all(v), enc))
            .collect::<Result<Vec<_>>>()?;
        let per_sample = |i: usize| views.iter().map(|p| p[i].as_slice()).collect::<Vec<_>>();
        let mut fused = BTreeMap::new();
        for head in &self.heads {
            let out = (0..ds.len()).map(|i| head.predict(&per_sample(i))).collect::<Result<Vec<_>>>()?;
            fused.insert(head.mode().name().to_string(), out);
        }
        let avg = (0..ds.len()).map(|i| average_fusion(&per_sample(i))).collect::<Result<Vec<_>>>()?;
        let max = (0..ds.len()).map(|i| max_fusion(&per_sample(i))).collect::<Result<Vec<_>>>()?;
        fused.insert("average".into(), avg);
        fused.insert("max".into(), max);
        Ok(Predictions { views, fused })
    }
}

/// Held-out metrics at one evaluation point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub step: usize,
    /// `warmup` or `alternating`.
    pub phase: String,
    /// Mean view losses on the last training batch.
    pub view_loss: Vec<f64>,
    /// Fusion losses on the last training batch; empty during warmup.
    pub fusion_loss: BTreeMap<String, f64>,
    pub view_accuracy: Vec<f64>,
    pub fused_accuracy: BTreeMap<String, f64>,
    pub view_confusion: Vec<Confusion>,
    pub fused_confusion: BTreeMap<String, Confusion>,
}

impl EvalRecord {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("record serializes")
    }
}

/// Accuracies and confusion matrices of every predictor on `ds`.
pub fn score(pred: &Predictions, labels: &[usize], classes: usize) -> Result<(Vec<f64>, Vec<Confusion>, BTreeMap<String, f64>, BTreeMap<String, Confusion>)> {
    let mut view_acc = Vec::new();
    let mut view_conf = Vec::new();
    for p in &pred.views {
        let hat = predictions(p);
        view_acc.push(accuracy(&hat, labels)?);
        view_conf.push(confusion(&hat, labels, classes)?);
    }
    let mut fused_acc = BTreeMap::new();
    let mut fused_conf = BTreeMap::new();
    for (name, p) in &pred.fused {
        let hat = predictions(p);
        fused_acc.insert(name.clone(), accuracy(&hat, labels)?);
        fused_conf.insert(name.clone(), confusion(&hat, labels, classes)?);
    }
    Ok((view_acc, view_conf, fused_acc, fused_conf))
}

/// Epoch-wise shuffling without replacement; a partial tail batch is skipped.
#[derive(Debug, Clone)]
struct BatchSampler {
    rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
    batch: usize,
}

impl BatchSampler {
    fn new(n: usize, batch: usize, rng: ChaCha8Rng) -> Self {
        let mut s = Self {
            rng,
            order: (0..n).collect(),
            cursor: n,
            batch: batch.min(n),
        };
        s.reshuffle();
        s
    }

    fn reshuffle(&mut self) {
        self.order.shuffle(&mut self.rng);
        self.cursor = 0;
    }

    fn next_batch(&mut self) -> Vec<usize> {
        if self.cursor + self.batch > self.order.len() {
            self.reshuffle();
        }
        let b = self.order[self.cursor..self.cursor + self.batch].to_vec();
        self.cursor += self.batch;
        b
    }
}

/// Losses from one iteration of the alternating schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct StepLosses {
    pub view: Vec<f64>,
    pub fusion: BTreeMap<FusionMode, f64>,
}

/// Parameter state, optimizer state and the batch sampler of one run.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub cfg: TrainConfig,
    pub model: Model,
    pub view_opt: Vec<AdamState>,
    pub head_opt: Vec<AdamState>,
    pub step: usize,
    sampler: Option<BatchSampler>,
}

impl Trainer {
    pub fn new(model: Model, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let view_opt = model.encoders.iter().map(|e| AdamState::new(e.params())).collect();
        let head_opt = model.heads.iter().map(|h| AdamState::new(h.params())).collect();
        Ok(Self {
            cfg,
            model,
            view_opt,
            head_opt,
            step: 0,
            sampler: None,
        })
    }

    /// Indices of the next training batch over `n` samples.
    pub fn next_batch(&mut self, n: usize) -> Vec<usize> {
        let (seed, b) = (self.cfg.seed, self.cfg.batch_size);
        let sampler = self
            .sampler
            .get_or_insert_with(|| BatchSampler::new(n, b, stream_rng(seed, SAMPLER_STREAM)));
        sampler.next_batch()
    }

    /// One forward/backward pass and Adam update on view `v` only. Returns the
    /// pre-update loss and predictions.
    pub fn train_step_view(&mut self, ds: &MultiViewDataset, batch: &[usize], v: usize) -> Result<ViewForward> {
        if v >= self.model.views() {
            return Err(Error::IndexOutOfRange {
                index: v,
                len: self.model.views(),
            });
        }
        if batch.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let labels: Vec<usize> = batch.iter().map(|&i| ds.samples()[i].label).collect();
        let enc = &mut self.model.encoders[v];
        let out = view_loss_and_grads(&ds.view_batch(v, batch), &labels, enc)?;
        adam_step(&mut enc.params_mut(), &mut self.view_opt[v], &self.cfg.adam())?;
        for (layer, stats) in enc.tcn.iter_mut().zip(&out.bn_stats) {
            layer.update_running(stats);
        }
        Ok(out)
    }

    /// One Adam update of every fusion head on fixed view predictions
    /// (`view_probs[i][v]`); encoders are untouched.
    pub fn train_step_fusion(&mut self, view_probs: &[Vec<Vec<f64>>], labels: &[usize]) -> Result<BTreeMap<FusionMode, f64>> {
        let adam = self.cfg.adam();
        let mut losses = BTreeMap::new();
        for (head, opt) in self.model.heads.iter_mut().zip(&mut self.head_opt) {
            let (loss, _) = fusion_loss_and_grads(view_probs, labels, head)?;
            adam_step(&mut head.params_mut(), opt, &adam)?;
            losses.insert(head.mode(), loss);
        }
        Ok(losses)
    }

    /// One iteration: every view step on a shared batch, then, past warmup,
    /// the fusion step on the predictions those view steps produced.
    pub fn step(&mut self, ds: &MultiViewDataset) -> Result<StepLosses> {
        let batch = self.next_batch(ds.len());
        self.step += 1;
        let mut view = Vec::with_capacity(self.model.views());
        let mut probs: Vec<Vec<Vec<f64>>> = vec![Vec::with_capacity(self.model.views()); batch.len()];
        for v in 0..self.model.views() {
            let out = self.train_step_view(ds, &batch, v)?;
            view.push(out.loss);
            for (slot, p) in probs.iter_mut().zip(out.probs) {
                slot.push(p);
            }
        }
        let fusion = if self.step > self.cfg.warmup() {
            let labels: Vec<usize> = batch.iter().map(|&i| ds.samples()[i].label).collect();
            self.train_step_fusion(&probs, &labels)?
        } else {
            BTreeMap::new()
        };
        Ok(StepLosses { view, fusion })
    }

    pub fn evaluate(&self, test: &MultiViewDataset, last: &StepLosses) -> Result<EvalRecord> {
        let pred = self.model.predict_prepared(test)?;
        let (view_accuracy, view_confusion, fused_accuracy, fused_confusion) =
            score(&pred, &test.labels(), self.model.classes)?;
        Ok(EvalRecord {
            step: self.step,
            phase: if self.step > self.cfg.warmup() { "alternating" } else { "warmup" }.into(),
            view_loss: last.view.clone(),
            fusion_loss: last.fusion.iter().map(|(m, l)| (m.name().to_string(), *l)).collect(),
            view_accuracy,
            fused_accuracy,
            view_confusion,
            fused_confusion,
        })
    }
}

/// Result of [`train_loop`].
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub log: Vec<EvalRecord>,
    /// State at the evaluation with the highest held-out accuracy of the first
    /// head; ties keep the earlier step.
    pub best: Trainer,
    pub last: Trainer,
    pub test: MultiViewDataset,
}

impl TrainOutcome {
    pub fn best_step(&self) -> usize {
        self.best.step
    }

    /// Highest held-out accuracy each method reached over the log, with its step.
    pub fn best_per_method(&self) -> BTreeMap<String, (f64, usize)> {
        let mut out: BTreeMap<String, (f64, usize)> = BTreeMap::new();
        for r in &self.log {
            let names = r
                .fused_accuracy
                .iter()
                .map(|(k, &a)| (k.clone(), a))
                .chain(r.view_accuracy.iter().enumerate().map(|(v, &a)| (format!("view{v}"), a)));
            for (name, acc) in names {
                let e = out.entry(name).or_insert((acc, r.step));
                if acc > e.0 {
                    *e = (acc, r.step);
                }
            }
        }
        out
    }
}

/// Splits, standardizes and trains on the alternating schedule, evaluating on the held-out
/// split every `eval_interval` steps and at the end.
pub fn train_loop(ds: &MultiViewDataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_loop_with(ds, cfg, |_| {})
}

/// [`train_loop`] with a callback on each evaluation record as it is produced.
pub fn train_loop_with(ds: &MultiViewDataset, cfg: &TrainConfig, mut on_eval: impl FnMut(&EvalRecord)) -> Result<TrainOutcome> {
    cfg.validate()?;
    let (train, test) = ds.split_test_fraction(cfg.test_fraction)?;
    let standardizer = if cfg.standardize {
        Standardizer::fit(&train)
    } else {
        Standardizer::identity(ds.dims())
    };
    let train = standardizer.apply(&train)?;
    let test_prepared = standardizer.apply(&test)?;
    let model = Model::new(ds.dims(), ds.seq_len(), ds.classes(), cfg, standardizer)?;
    let mut trainer = Trainer::new(model, cfg.clone())?;
    let primary = cfg.heads[0].name();

    let mut log = Vec::new();
    let mut best: Option<(f64, Trainer)> = None;
    let mut last = StepLosses {
        view: Vec::new(),
        fusion: BTreeMap::new(),
    };
    for s in 1..=cfg.steps {
        last = trainer.step(&train)?;
        if s % cfg.eval_interval == 0 || s == cfg.steps {
            let rec = trainer.evaluate(&test_prepared, &last)?;
            let acc = rec.fused_accuracy[primary];
            if best.as_ref().is_none_or(|(b, _)| acc > *b) {
                best = Some((acc, trainer.clone()));
            }
            on_eval(&rec);
            log.push(rec);
        }
    }
    if cfg.steps == 0 {
        let rec = trainer.evaluate(&test_prepared, &last)?;
        on_eval(&rec);
        log.push(rec);
    }
    let best = best.map_or_else(|| trainer.clone(), |(_, t)| t);
    Ok(TrainOutcome {
        log,
        best,
        last: trainer,
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_generate, SynthConfig};

    fn tiny_cfg(steps: usize) -> TrainConfig {
        TrainConfig {
            hidden: 3,
            conv_channels: vec![3],
            kernel_sizes: vec![3],
            filters: 2,
            batch_size: 8,
            eval_interval: 5,
            learning_rate: 1e-2,
            test_fraction: 0.25,
            heads: vec![FusionMode::Complete, FusionMode::Concat],
            ..TrainConfig::with_steps(steps)
        }
    }

    fn tiny_data(views: usize) -> MultiViewDataset {
        let confusions = if views == 1 { "" } else { "0-1" };
        let cfg = SynthConfig {
            classes: 3,
            views,
            samples: 48,
            length: 8,
            dims: vec![2; views],
            noise: 0.3,
            confusions: confusions.parse().unwrap(),
            seed: 5,
            ..SynthConfig::benchmark(0.0, 0)
        };
        synth_generate(&cfg).unwrap().dataset
    }

    fn bits<P: ParamSet>(p: &P) -> Vec<u64> {
        p.params().iter().flat_map(|q| q.value.data().iter().map(|x| x.to_bits())).collect()
    }

    fn trainer(ds: &MultiViewDataset, cfg: &TrainConfig) -> Trainer {
        let model = Model::new(ds.dims(), ds.seq_len(), ds.classes(), cfg, Standardizer::identity(ds.dims())).unwrap();
        Trainer::new(model, cfg.clone()).unwrap()
    }

    #[test]
    fn view_step_is_deterministic() {
        let ds = tiny_data(2);
        let cfg = tiny_cfg(10);
        let mut a = trainer(&ds, &cfg);
        let mut b = trainer(&ds, &cfg);
        let batch: Vec<usize> = (0..8).collect();
        a.train_step_view(&ds, &batch, 1).unwrap();
        b.train_step_view(&ds, &batch, 1).unwrap();
        assert_eq!(a.model, b.model);
        assert!(a.train_step_view(&ds, &[], 0).is_err());
        assert!(a.train_step_view(&ds, &batch, 2).is_err());
    }

    #[test]
    fn view_loss_decreases_on_fixed_batch() {
        let ds = tiny_data(2);
        let mut t = trainer(&ds, &tiny_cfg(10));
        let batch: Vec<usize> = (0..8).collect();
        let mut losses = Vec::new();
        for _ in 0..50 {
            losses.push(t.train_step_view(&ds, &batch, 0).unwrap().loss);
        }
        assert!(losses.windows(2).all(|w| w[1] < w[0]), "{losses:?}");
    }

    #[test]
    fn fusion_step_leaves_encoders_and_decreases_loss() {
        let ds = tiny_data(3);
        let mut t = trainer(&ds, &tiny_cfg(10));
        let probs: Vec<Vec<Vec<f64>>> = (0..6)
            .map(|i| (0..3).map(|v| {
                let mut p = vec![0.2, 0.3, 0.5];
                p.rotate_left((i + v) % 3);
                p
            }).collect())
            .collect();
        let labels = [0, 1, 2, 0, 1, 2];
        let before: Vec<Vec<u64>> = t.model.encoders.iter().map(bits).collect();
        let mut losses = Vec::new();
        for _ in 0..30 {
            losses.push(t.train_step_fusion(&probs, &labels).unwrap()[&FusionMode::Complete]);
        }
        let after: Vec<Vec<u64>> = t.model.encoders.iter().map(bits).collect();
        assert_eq!(before, after);
        assert!(losses.last() < losses.first());
        assert!(t.train_step_fusion(&[], &[]).is_err());
    }

    #[test]
    fn single_view_fusion_step_runs() {
        let ds = tiny_data(1);
        let mut cfg = tiny_cfg(4);
        cfg.warmup_steps = Some(1);
        let out = train_loop(&ds, &cfg).unwrap();
        assert!(!out.log.is_empty());
    }

    #[test]
    fn warmup_only_run_keeps_fusion_at_init() {
        let ds = tiny_data(2);
        let mut cfg = tiny_cfg(6);
        cfg.warmup_steps = Some(6);
        let out = train_loop(&ds, &cfg).unwrap();
        let init = trainer(&ds, &cfg);
        for (h, h0) in out.last.model.heads.iter().zip(&init.model.heads) {
            assert_eq!(bits(h), bits(h0));
        }
        assert!(out.log.iter().all(|r| r.phase == "warmup" && r.fusion_loss.is_empty()));
    }

    #[test]
    fn same_seed_gives_identical_logs() {
        let ds = tiny_data(2);
        let cfg = tiny_cfg(12);
        let a: Vec<String> = train_loop(&ds, &cfg).unwrap().log.iter().map(EvalRecord::to_json_line).collect();
        let b: Vec<String> = train_loop(&ds, &cfg).unwrap().log.iter().map(EvalRecord::to_json_line).collect();
        assert_eq!(a, b);
        assert_eq!(a.len(), 3);
    }

    #[test]
    fn extra_heads_do_not_change_the_others() {
        let ds = tiny_data(2);
        let mut cfg = tiny_cfg(12);
        cfg.heads = vec![FusionMode::Complete];
        let solo = train_loop(&ds, &cfg).unwrap();
        cfg.heads = vec![FusionMode::InterOnly, FusionMode::Complete, FusionMode::Concat];
        let joint = train_loop(&ds, &cfg).unwrap();
        for (a, b) in solo.log.iter().zip(&joint.log) {
            assert_eq!(a.view_accuracy, b.view_accuracy);
            assert_eq!(a.fused_accuracy["complete"].to_bits(), b.fused_accuracy["complete"].to_bits());
            assert_eq!(a.fusion_loss["complete"].to_bits(), b.fusion_loss["complete"].to_bits());
        }
        assert_eq!(solo.last.model.head(FusionMode::Complete), joint.last.model.head(FusionMode::Complete));
    }
}
