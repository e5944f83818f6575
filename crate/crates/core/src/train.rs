//! Training loop: cross-entropy, AdamW and a warmup/linear-decay schedule.

use std::fmt::Write as _;
use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{DatasetSplit, LabeledPayload};
use crate::eval::{infer, EvalError};
use crate::model::{bind, forward, Checkpoint, Dropout, Model, ModelError};
use crate::tensor::{nll, Float, Graph, Tensor};
use crate::tokenizer::encode_batch;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("training split is empty")]
    EmptyTrainSplit,
    #[error("label {label} out of range for {k} classes")]
    LabelOutOfRange { label: usize, k: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub warmup_fraction: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub grad_clip_norm: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::paper()
    }
}

impl TrainConfig {
    pub fn paper() -> Self {
        Self {
            learning_rate: 2e-5,
            epochs: 5,
            batch_size: 16,
            weight_decay: 0.01,
            warmup_fraction: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            grad_clip_norm: None,
            seed: 0,
        }
    }

    /// Same recipe with a peak rate suited to the small model and a
    /// few hundred optimizer steps.
    pub fn desk() -> Self {
        Self { learning_rate: 1e-3, ..Self::paper() }
    }

    pub fn preset(name: &str) -> Result<Self, TrainError> {
        match name {
            "paper" => Ok(Self::paper()),
            "desk" => Ok(Self::desk()),
            other => Err(TrainError::InvalidConfig(format!("unknown preset {other:?}"))),
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.to_string()));
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return bad("warmup_fraction must lie in [0, 1)");
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.weight_decay < 0.0 || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("weight_decay must be non-negative and betas in [0, 1)");
        }
        if matches!(self.grad_clip_norm, Some(c) if !(c > 0.0)) {
            return bad("grad_clip_norm must be positive");
        }
        Ok(())
    }

    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig { beta1: self.beta1, beta2: self.beta2, eps: self.eps, weight_decay: self.weight_decay }
    }
}

/// Mean over rows of `-log softmax(logits)[label]` for `[batch, K]` logits.
pub fn cross_entropy<T: Float>(logits: &Tensor<T>, labels: &[usize]) -> Result<T, TrainError> {
    let k = *logits.shape().last().unwrap_or(&0);
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(TrainError::LabelOutOfRange { label: bad, k });
    }
    let total: T = logits.data().chunks(k.max(1)).zip(labels).map(|(row, &l)| nll(row, l)).sum();
    Ok(total / T::from_usize(labels.len().max(1)).unwrap())
}

/// `peak·step/warmup` up to `warmup`, then `peak·(total−step)/(total−warmup)`.
pub fn lr_schedule(step: usize, total_steps: usize, warmup_steps: usize, peak: f64) -> f64 {
    if step <= warmup_steps && warmup_steps > 0 {
        peak * step as f64 / warmup_steps as f64
    } else if total_steps > warmup_steps {
        peak * total_steps.saturating_sub(step) as f64 / (total_steps - warmup_steps) as f64
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

/// First and second moment buffers, one per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    pub step: u64,
}

impl<T: Float> AdamState<T> {
    pub fn new<S: AsRef<[T]>>(params: &[S]) -> Self {
        let zeros = |p: &S| vec![T::zero(); p.as_ref().len()];
        Self { m: params.iter().map(zeros).collect(), v: params.iter().map(zeros).collect(), step: 0 }
    }
}

/// One AdamW update. Weight decay shrinks each parameter by `lr·λ` before
/// and independently of the bias-corrected moment step.
pub fn adamw_step<T: Float>(params: &mut [&mut [T]], grads: &[&[T]], state: &mut AdamState<T>, lr: f64, cfg: &AdamWConfig) {
    assert_eq!(params.len(), grads.len());
    assert_eq!(params.len(), state.m.len());
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (T::lit(cfg.beta1), T::lit(cfg.beta2));
    let (one_b1, one_b2) = (T::lit(1.0 - cfg.beta1), T::lit(1.0 - cfg.beta2));
    let bc1 = T::lit(1.0 - cfg.beta1.powi(t));
    let bc2 = T::lit(1.0 - cfg.beta2.powi(t));
    let lr_t = T::lit(lr);
    let decay = T::lit(lr * cfg.weight_decay);
    let eps = T::lit(cfg.eps);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        assert_eq!(p.len(), g.len());
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for j in 0..p.len() {
            p[j] = p[j] - decay * p[j];
            m[j] = b1 * m[j] + one_b1 * g[j];
            v[j] = b2 * v[j] + one_b2 * g[j] * g[j];
            let mhat = m[j] / bc1;
            let vhat = v[j] / bc2;
            p[j] = p[j] - lr_t * mhat / (vhat.sqrt() + eps);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: Option<f64>,
    pub val_loss: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
}

impl TrainLog {
    /// One JSON object per optimizer step.
    pub fn write_steps(&self, mut w: impl Write) -> std::io::Result<()> {
        for s in &self.steps {
            serde_json::to_writer(&mut w, s)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn epoch_table(&self) -> String {
        let mut out = format!("{:>5} {:>11} {:>9} {:>9} {:>8}\n", "epoch", "train_loss", "val_acc", "val_loss", "seconds");
        let opt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.4}"));
        for e in &self.epochs {
            let _ = writeln!(
                out,
                "{:>5} {:>11.5} {:>9} {:>9} {:>8.2}",
                e.epoch,
                e.train_loss,
                opt(e.val_accuracy),
                opt(e.val_loss),
                e.seconds
            );
        }
        out
    }
}

pub struct TrainOutcome {
    /// Weights after the final epoch.
    pub checkpoint: Checkpoint,
    /// Highest validation accuracy seen, with its epoch (1-based).
    pub best: Option<(usize, Checkpoint)>,
    pub log: TrainLog,
}

pub fn total_steps(train_size: usize, batch_size: usize, epochs: usize) -> usize {
    epochs * train_size.div_ceil(batch_size)
}

fn global_norm(grads: &[Tensor<f32>]) -> f64 {
    grads.iter().flat_map(|g| g.data()).map(|&v| f64::from(v) * f64::from(v)).sum::<f64>().sqrt()
}

/// Trains `model` in place on `split.train`, validating on
/// `split.validation` after every epoch. Fully determined by the model's
/// initial weights and `tcfg.seed`.
pub fn train(mut model: Model, split: &DatasetSplit<LabeledPayload>, tcfg: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    tcfg.validate()?;
    let data = &split.train;
    if data.is_empty() {
        return Err(TrainError::EmptyTrainSplit);
    }
    let k = model.config.num_labels;
    for d in data.iter().chain(&split.validation) {
        if d.label as usize >= k {
            return Err(TrainError::LabelOutOfRange { label: d.label as usize, k });
        }
    }

    let steps_per_epoch = data.len().div_ceil(tcfg.batch_size);
    let total = steps_per_epoch * tcfg.epochs;
    let warmup = ((total as f64 * tcfg.warmup_fraction).round() as usize).min(total - 1);
    let adam_cfg = tcfg.adamw();
    let mut state = AdamState::new(&model.params.entries.iter().map(|(_, t)| t.data()).collect::<Vec<_>>());
    let mut rng = ChaCha8Rng::seed_from_u64(tcfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut log = TrainLog::default();
    let mut best: Option<(usize, f64, Checkpoint)> = None;
    let mut step = 0usize;

    for epoch in 1..=tcfg.epochs {
        let started = Instant::now();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(tcfg.batch_size) {
            step += 1;
            let payloads: Vec<&[u8]> = chunk.iter().map(|&i| data[i].payload.as_slice()).collect();
            let labels: Vec<usize> = chunk.iter().map(|&i| data[i].label as usize).collect();
            let batch = encode_batch(&payloads, model.config.max_position_embeddings);

            let mut g = Graph::<f32>::new();
            let bound = bind(&mut g, &model.params, true);
            let dropout = Some(Dropout { p: model.config.dropout_p, seed: tcfg.seed ^ (step as u64) << 20 });
            let out = forward(&mut g, &bound, &model.config, &batch, dropout)?;
            let loss = g.cross_entropy(out.logits, &labels).map_err(ModelError::from)?;
            let loss_value = f64::from(g.value(loss).item());
            g.backward(loss).map_err(ModelError::from)?;
            let mut grads: Vec<Tensor<f32>> = bound.vars().iter().map(|&v| g.grad(v).expect("trainable")).collect();
            drop(g);

            if let Some(clip) = tcfg.grad_clip_norm {
                let norm = global_norm(&grads);
                if norm > clip {
                    let s = (clip / norm) as f32;
                    grads.iter_mut().flat_map(|t| t.data_mut()).for_each(|v| *v *= s);
                }
            }
            let lr = lr_schedule(step, total, warmup, tcfg.learning_rate);
            let mut params: Vec<&mut [f32]> = model.params.entries.iter_mut().map(|(_, t)| t.data_mut()).collect();
            let grad_refs: Vec<&[f32]> = grads.iter().map(|t| t.data()).collect();
            adamw_step(&mut params, &grad_refs, &mut state, lr, &adam_cfg);

            loss_sum += loss_value * chunk.len() as f64;
            log.steps.push(StepRecord { epoch, step, lr, loss: loss_value });
        }

        let (val_accuracy, val_loss) = if split.validation.is_empty() {
            (None, None)
        } else {
            let (preds, loss) = infer(&model, &split.validation, tcfg.batch_size.max(32))?;
            let correct = preds.iter().zip(&split.validation).filter(|(p, d)| **p == d.label).count();
            (Some(correct as f64 / split.validation.len() as f64), Some(loss))
        };
        if let Some(acc) = val_accuracy {
            if best.as_ref().map_or(true, |(_, b, _)| acc > *b) {
                best = Some((epoch, acc, Checkpoint::new(&model, Some(tcfg.seed))));
            }
        }
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / data.len() as f64,
            val_accuracy,
            val_loss,
            seconds: started.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}/{}: train loss {:.4}, val acc {:?}",
            tcfg.epochs,
            record.train_loss,
            record.val_accuracy
        );
        log.epochs.push(record);
    }

    Ok(TrainOutcome {
        checkpoint: Checkpoint::new(&model, Some(tcfg.seed)),
        best: best.map(|(e, _, c)| (e, c)),
        log,
    })
}
