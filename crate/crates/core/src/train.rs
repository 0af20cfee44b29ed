//! Optimization loop: AdamW with decoupled weight decay, linear warm-up and
//! cosine decay.
//!
//! Everything random (initialization, data order, dropout masks, smoothness
//! sampling) is drawn from ChaCha streams derived from the configured seed,
//! and the loop is single-threaded, so a run is a pure function of
//! `(config, dataset)`.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::align::DEFAULT_DROP_PERCENTILE;
use crate::error::{Error, Result};
use crate::losses::{batch_objective, ContrastiveConfig, LossBreakdown};
use crate::matrix::Matrix;
use crate::model::{ModelConfig, ModelParams, Tape, Var};
use crate::types::DatasetSample;

const INIT_STREAM: u64 = 0;
const TRAIN_STREAM: u64 = 1;
const EVAL_STREAM: u64 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub peak_lr: f64,
    pub final_lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub drop_percentile: f64,
    pub seed: u64,
    pub contrastive: ContrastiveConfig,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    /// Desk-scale run on the default synthetic dataset.
    fn default() -> Self {
        Self {
            epochs: 30,
            warmup_epochs: 3,
            peak_lr: 1e-3,
            final_lr: 1e-6,
            weight_decay: 1e-4,
            batch_size: 8,
            drop_percentile: DEFAULT_DROP_PERCENTILE,
            seed: 0,
            contrastive: ContrastiveConfig::default(),
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Full-length schedule: 60 epochs, three of warm-up to 3e-4, cosine
    /// decay to 1e-6, weight decay 1e-4.
    pub fn full_schedule(model: ModelConfig) -> Self {
        Self {
            epochs: 60,
            warmup_epochs: 3,
            peak_lr: 3e-4,
            final_lr: 1e-6,
            weight_decay: 1e-4,
            model,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.epochs == 0 || self.warmup_epochs >= self.epochs {
            return bad(format!(
                "need 0 <= warmup_epochs ({}) < epochs ({})",
                self.warmup_epochs, self.epochs
            ));
        }
        if !(self.peak_lr > self.final_lr && self.final_lr > 0.0) {
            return bad(format!(
                "need peak_lr ({}) > final_lr ({}) > 0",
                self.peak_lr, self.final_lr
            ));
        }
        if !(self.weight_decay >= 0.0) || self.batch_size == 0 {
            return bad("weight_decay must be >= 0 and batch_size positive".into());
        }
        if !(self.drop_percentile > 0.0 && self.drop_percentile <= 1.0) {
            return bad(format!("drop_percentile {} outside (0, 1]", self.drop_percentile));
        }
        self.contrastive.validate()?;
        self.model.validate()
    }
}

/// Learning rate at optimizer step `step` (zero-based): linear ramp from 0 to
/// `peak_lr` over the warm-up steps, then a half cosine reaching `final_lr`
/// at the last step.
pub fn lr_at(step: usize, steps_per_epoch: usize, cfg: &TrainConfig) -> f64 {
    let warm = cfg.warmup_epochs * steps_per_epoch;
    let total = cfg.epochs * steps_per_epoch;
    if step < warm {
        return cfg.peak_lr * step as f64 / warm as f64;
    }
    let span = total.saturating_sub(1).saturating_sub(warm);
    let t = if span == 0 {
        if step > warm {
            1.0
        } else {
            0.0
        }
    } else {
        ((step - warm) as f64 / span as f64).min(1.0)
    };
    cfg.final_lr + 0.5 * (cfg.peak_lr - cfg.final_lr) * (1.0 + (std::f64::consts::PI * t).cos())
}

/// Adaptive moment estimation with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
    t: i32,
}

impl AdamW {
    pub fn new(params: &[Matrix]) -> Self {
        let zeros = || params.iter().map(|p| Matrix::zeros(p.rows(), p.cols())).collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [Matrix], grads: &[Matrix], lr: f64, weight_decay: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let decay = 1.0 - lr * weight_decay;
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            let ps = p.as_mut_slice();
            let (ms, vs) = (m.as_mut_slice(), v.as_mut_slice());
            for (k, &gk) in g.as_slice().iter().enumerate() {
                ms[k] = self.beta1 * ms[k] + (1.0 - self.beta1) * gk;
                vs[k] = self.beta2 * vs[k] + (1.0 - self.beta2) * gk * gk;
                let update = (ms[k] / c1) / ((vs[k] / c2).sqrt() + self.eps);
                ps[k] = ps[k] * decay - lr * update;
            }
        }
    }
}

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub seq: f64,
    pub glob: f64,
    pub div: f64,
    pub smooth: f64,
    pub total: f64,
    pub matched_pairs: usize,
    pub lr: f64,
}

impl StepLog {
    fn new(step: usize, parts: &LossBreakdown, lr: f64) -> Self {
        Self {
            step,
            seq: parts.seq,
            glob: parts.glob,
            div: parts.div,
            smooth: parts.smooth,
            total: parts.total,
            matched_pairs: parts.matched_pairs,
            lr,
        }
    }
}

pub struct TrainOutcome {
    pub params: ModelParams,
    pub log: Vec<StepLog>,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn check_dataset(dataset: &[DatasetSample], dim: usize) -> Result<()> {
    if dataset.is_empty() {
        return Err(Error::InvalidData("empty training set".into()));
    }
    for s in dataset {
        for d in [s.video.dim(), s.phrases.dim()] {
            if d != dim {
                return Err(Error::DimMismatch { left: dim, right: d });
            }
        }
    }
    Ok(())
}

/// Record the batch objective; returns the loss node and its breakdown.
fn objective<R: rand::Rng>(
    tape: &mut Tape,
    params: &ModelParams,
    batch: &[&DatasetSample],
    cfg: &TrainConfig,
    rng: &mut R,
    training: bool,
) -> Result<(Var, LossBreakdown, crate::model::BoundParams)> {
    let bound = params.bind(tape);
    let mut slots = Vec::with_capacity(batch.len());
    for s in batch {
        let dropout = if training { Some(&mut *rng) } else { None };
        slots.push(params.forward_on_tape(tape, &bound, &s.video, dropout)?);
    }
    let pairs: Vec<_> = batch.iter().map(|s| (&s.video, &s.phrases)).collect();
    let (loss, parts) = batch_objective(tape, &slots, &pairs, &cfg.contrastive, cfg.drop_percentile, rng)?;
    Ok((loss, parts, bound))
}

/// The parameters [`train`] starts from for this config.
pub fn initial_params(cfg: &TrainConfig) -> Result<ModelParams> {
    ModelParams::init(cfg.model.clone(), &mut stream(cfg.seed, INIT_STREAM))
}

/// Train from a fresh initialization.
pub fn train(dataset: &[DatasetSample], cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with(dataset, cfg, |_, _| Ok(()))
}

/// [`train`] with a callback after every epoch (`epoch` is 1-based).
pub fn train_with<F>(dataset: &[DatasetSample], cfg: &TrainConfig, mut on_epoch: F) -> Result<TrainOutcome>
where
    F: FnMut(usize, &ModelParams) -> Result<()>,
{
    cfg.validate()?;
    check_dataset(dataset, cfg.model.dim)?;
    let mut params = initial_params(cfg)?;
    let mut rng = stream(cfg.seed, TRAIN_STREAM);
    let mut opt = AdamW::new(params.tensors());
    let steps_per_epoch = dataset.len().div_ceil(cfg.batch_size);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs * steps_per_epoch);
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&DatasetSample> = chunk.iter().map(|&i| &dataset[i]).collect();
            let mut tape = Tape::new();
            let (loss, parts, bound) = objective(&mut tape, &params, &batch, cfg, &mut rng, true)?;
            let mut grads = tape.backward(loss)?;
            let grads = params.gradients(&mut grads, &bound);
            if let Some(t) = grads.iter().position(|g| g.find_non_finite().is_some()) {
                return Err(Error::Numerical(format!(
                    "non-finite gradient for {} at step {step}",
                    params.names()[t]
                )));
            }
            let lr = lr_at(step, steps_per_epoch, cfg);
            opt.step(params.tensors_mut(), &grads, lr, cfg.weight_decay);
            if let Some(t) = params.tensors().iter().position(|p| p.find_non_finite().is_some()) {
                return Err(Error::Numerical(format!(
                    "parameter {} became non-finite at step {step}",
                    params.names()[t]
                )));
            }
            log::debug!(
                "step {step} total {:.5} seq {:.5} glob {:.5} lr {lr:.2e}",
                parts.total,
                parts.seq,
                parts.glob
            );
            log.push(StepLog::new(step, &parts, lr));
            step += 1;
        }
        on_epoch(epoch + 1, &params)?;
    }
    Ok(TrainOutcome { params, log })
}

/// Mean training objective over the whole dataset with dropout off and a
/// fixed sampling stream, batching in dataset order.
pub fn evaluate_objective(params: &ModelParams, dataset: &[DatasetSample], cfg: &TrainConfig) -> Result<LossBreakdown> {
    check_dataset(dataset, params.config().dim)?;
    let mut rng = stream(cfg.seed, EVAL_STREAM);
    let mut sum = LossBreakdown {
        seq: 0.0,
        glob: 0.0,
        div: 0.0,
        smooth: 0.0,
        total: 0.0,
        matched_pairs: 0,
    };
    let mut batches = 0.0;
    for chunk in dataset.chunks(cfg.batch_size) {
        let batch: Vec<&DatasetSample> = chunk.iter().collect();
        let mut tape = Tape::new();
        let (_, parts, _) = objective(&mut tape, params, &batch, cfg, &mut rng, false)?;
        sum.seq += parts.seq;
        sum.glob += parts.glob;
        sum.div += parts.div;
        sum.smooth += parts.smooth;
        sum.total += parts.total;
        sum.matched_pairs += parts.matched_pairs;
        batches += 1.0;
    }
    sum.seq /= batches;
    sum.glob /= batches;
    sum.div /= batches;
    sum.smooth /= batches;
    sum.total /= batches;
    Ok(sum)
}
