//! Optimization loop.
//!
//! Batch order is a pure function of the seed and the global step counter:
//! epoch `e` shuffles with `root.fork(EPOCH_STREAM + e)`, so a trainer
//! restored from a checkpoint continues mid-epoch exactly where it stopped.

use std::f64::consts::PI;
use std::path::Path;
use std::time::Instant;

use crate::analysis::SpikeStats;
use crate::autograd::GradientSet;
use crate::config::{Mode, RunConfig, Schedule};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::report::{MetricsRow, MetricsWriter};
use crate::rng::{make_rng, Rng};
use crate::tasks::{epoch_batches, LabeledSequenceBatch, Splits};

const INIT_STREAM: u64 = 1;
const EPOCH_STREAM: u64 = 1000;

/// Adam with global-norm clipping.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip: f64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
}

impl Adam {
    pub fn new(cfg: &RunConfig, model: &Model) -> Self {
        let zeros: Vec<Vec<f64>> = model.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        Self {
            lr: cfg.optim.lr,
            beta1: cfg.optim.beta1,
            beta2: cfg.optim.beta2,
            eps: cfg.optim.eps,
            clip: cfg.optim.grad_clip,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    /// Clips `grads` in place and applies one update with learning rate `lr`.
    /// Returns the pre-clip gradient norm.
    pub fn update(&mut self, model: &mut Model, grads: &mut GradientSet, lr: f64) -> f64 {
        let norm = grads.global_norm();
        if self.clip > 0.0 && norm > self.clip {
            grads.scale(self.clip / norm);
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powf(self.t as f64);
        let bc2 = 1.0 - self.beta2.powf(self.t as f64);
        let params = model.tensors_mut();
        for (((p, (_, g)), m), v) in params.into_iter().zip(grads.tensors()).zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let step = lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + self.eps);
                p[i] -= step;
            }
        }
        model.bump_version();
        norm
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepMetrics {
    pub step: u64,
    pub loss: f64,
    pub correct: usize,
    pub count: usize,
    pub spike_rate: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalMetrics {
    pub loss: f64,
    pub accuracy: f64,
    pub spike_rate: f64,
    pub spikes: SpikeStats,
}

/// Model, optimizer and position in the batch stream.
pub struct Trainer {
    pub config: RunConfig,
    pub model: Model,
    pub opt: Adam,
    pub step: u64,
    root: Rng,
}

impl Trainer {
    /// Fresh model initialized from `cfg.seed`.
    pub fn new(cfg: &RunConfig, input_channels: usize) -> Result<Self> {
        cfg.validate()?;
        let root = make_rng(cfg.seed);
        let model = Model::from_config(cfg, input_channels, &mut root.fork(INIT_STREAM))?;
        let opt = Adam::new(cfg, &model);
        Ok(Self {
            config: cfg.clone(),
            model,
            opt,
            step: 0,
            root,
        })
    }

    pub(crate) fn from_parts(config: RunConfig, model: Model, opt: Adam, step: u64, root: Rng) -> Self {
        Self {
            config,
            model,
            opt,
            step,
            root,
        }
    }

    pub fn rng(&self) -> &Rng {
        &self.root
    }

    pub fn batches_per_epoch(&self, train_len: usize) -> u64 {
        train_len.div_ceil(self.config.optim.batch_size.max(1)) as u64
    }

    /// Learning rate at the current step.
    pub fn learning_rate(&self, train_len: usize) -> f64 {
        let base = self.opt.lr;
        match self.config.optim.schedule {
            Schedule::Constant => base,
            Schedule::Cosine => {
                let total = (self.batches_per_epoch(train_len) * self.config.optim.epochs as u64).max(1);
                let frac = (self.step.min(total)) as f64 / total as f64;
                0.5 * base * (1.0 + (PI * frac).cos())
            }
        }
    }

    /// One optimizer step on `batch` at learning rate `lr`.
    pub fn train_step(&mut self, batch: &LabeledSequenceBatch, lr: f64) -> Result<StepMetrics> {
        let mode = self.config.optim.mode;
        let (out, mut grads) = match self.model.loss_and_grad(&batch.inputs, &batch.labels, mode) {
            Err(Error::NonFinite(what)) => {
                return Err(Error::NumericAbort {
                    step: self.step,
                    diagnostics: format!("non-finite {what}, max |param| = {:e}", self.max_param()),
                })
            }
            r => r?,
        };
        if !out.loss.is_finite() || !grads.is_finite() {
            return Err(Error::NumericAbort {
                step: self.step,
                diagnostics: self.diagnostics(out.loss, &grads),
            });
        }
        let grad_norm = self.opt.update(&mut self.model, &mut grads, lr);
        self.model.validate_params().map_err(|e| Error::NumericAbort {
            step: self.step,
            diagnostics: format!("parameter constraint violated after update: {e}"),
        })?;
        self.step += 1;
        Ok(StepMetrics {
            step: self.step,
            loss: out.loss,
            correct: out.correct,
            count: out.count,
            spike_rate: out.spikes.rate(),
            grad_norm,
        })
    }

    fn diagnostics(&self, loss: f64, grads: &GradientSet) -> String {
        let bad: Vec<&str> = grads
            .tensors()
            .iter()
            .filter(|(_, t)| t.iter().any(|v| !v.is_finite()))
            .map(|(c, _)| c.name())
            .collect();
        format!(
            "loss = {loss}, non-finite gradients in [{}], max |param| = {:e}",
            bad.join(", "),
            self.max_param()
        )
    }

    fn max_param(&self) -> f64 {
        self.model.tensors().iter().flat_map(|t| t.iter()).fold(0.0f64, |a, v| a.max(v.abs()))
    }

    /// Sample indices of the batch at global step `step`.
    pub fn batch_indices(&self, train_len: usize, step: u64) -> Vec<usize> {
        let per_epoch = self.batches_per_epoch(train_len);
        let epoch = step / per_epoch;
        let mut rng = self.root.fork(EPOCH_STREAM + epoch);
        let mut batches = epoch_batches(train_len, self.config.optim.batch_size, &mut rng);
        batches.swap_remove((step % per_epoch) as usize)
    }

    /// Runs `steps` further optimizer steps over `train`.
    pub fn train_steps(&mut self, train: &LabeledSequenceBatch, steps: u64) -> Result<Vec<StepMetrics>> {
        let mut out = Vec::with_capacity(steps as usize);
        for _ in 0..steps {
            let batch = train.select(&self.batch_indices(train.len(), self.step))?;
            let lr = self.learning_rate(train.len());
            out.push(self.train_step(&batch, lr)?);
        }
        Ok(out)
    }

    /// Trains to the configured epoch count, evaluating both splits after each
    /// epoch. Rows are written to `metrics` as they are produced.
    pub fn fit(&mut self, data: &Splits, mut metrics: Option<&mut MetricsWriter>) -> Result<Vec<MetricsRow>> {
        let per_epoch = self.batches_per_epoch(data.train.len());
        let start = Instant::now();
        let mut rows = Vec::new();
        let eval_batch = self.config.optim.batch_size.max(1);
        while self.step < per_epoch * self.config.optim.epochs as u64 {
            let epoch = self.step / per_epoch;
            let remaining = per_epoch - self.step % per_epoch;
            let steps = self.train_steps(&data.train, remaining)?;
            let (mut loss, mut correct, mut count) = (0.0, 0usize, 0usize);
            let mut rate = 0.0;
            for s in &steps {
                loss += s.loss * s.count as f64;
                rate += s.spike_rate * s.count as f64;
                correct += s.correct;
                count += s.count;
            }
            let train_row = MetricsRow {
                epoch: epoch + 1,
                split: "train".into(),
                loss: loss / count.max(1) as f64,
                acc: correct as f64 / count.max(1) as f64,
                spike_rate: rate / count.max(1) as f64,
                wallclock_s: start.elapsed().as_secs_f64(),
            };
            let test = evaluate(&self.model, &data.test, eval_batch, self.config.optim.mode)?;
            let test_row = MetricsRow {
                epoch: epoch + 1,
                split: "test".into(),
                loss: test.loss,
                acc: test.accuracy,
                spike_rate: test.spike_rate,
                wallclock_s: start.elapsed().as_secs_f64(),
            };
            for row in [train_row, test_row] {
                if let Some(w) = metrics.as_deref_mut() {
                    w.write(&row)?;
                }
                rows.push(row);
            }
        }
        Ok(rows)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::checkpoint::save_checkpoint(self, path)
    }
}

/// Loss, accuracy and spike rate of `model` over `data`, in chunks of `batch_size`.
pub fn evaluate(model: &Model, data: &LabeledSequenceBatch, batch_size: usize, mode: Mode) -> Result<EvalMetrics> {
    let mut loss = 0.0;
    let mut correct = 0;
    let mut spikes = SpikeStats::default();
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(batch_size.max(1)) {
        let batch = data.select(chunk)?;
        let out = model.forward_loss(&batch.inputs, &batch.labels, mode)?;
        loss += out.loss * out.count as f64;
        correct += out.correct;
        spikes.accumulate(&out.spikes);
    }
    let n = data.len().max(1) as f64;
    Ok(EvalMetrics {
        loss: loss / n,
        accuracy: correct as f64 / n,
        spike_rate: spikes.rate(),
        spikes,
    })
}
