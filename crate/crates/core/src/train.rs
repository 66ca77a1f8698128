//! Minibatch training of the head: MSE loss, backprop, AdamW, warmup +
//! cosine schedule, periodic validation, best-checkpoint retention.

use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::data::{Batch, SampleSet, SplitAssignment, SplitLabel};
use crate::head::{EncodingHead, Mode};
use crate::metrics;
use crate::optim::{adamw_step, AdamWConfig, OptimizerState, Schedule};
use crate::{rng_from_seed, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LossMask {
    /// Every vertex counts, including zero-filled ones.
    #[default]
    None,
    /// Only vertices valid for the sample's subject count.
    SubjectValid,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub peak_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Also decay batch-norm gain/bias.
    pub decay_norm: bool,
    pub feature_dropout: f64,
    pub total_steps: usize,
    pub warmup_steps: usize,
    pub min_lr: f64,
    pub seed: u64,
    pub eval_interval: usize,
    pub loss_mask: LossMask,
    /// Train only the subject maps (new-subject adaptation).
    pub freeze_shared: bool,
}

impl TrainConfig {
    /// Head-only first phase.
    pub fn phase1() -> Self {
        Self {
            batch_size: 512,
            peak_lr: 6e-4,
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-8,
            weight_decay: 0.8,
            decay_norm: false,
            feature_dropout: 0.9,
            total_steps: 5000,
            warmup_steps: 250,
            min_lr: 3e-5,
            seed: 0,
            eval_interval: 250,
            loss_mask: LossMask::None,
            freeze_shared: false,
        }
    }

    /// Fine-tuning second phase, applied to the head only.
    pub fn phase2() -> Self {
        Self {
            batch_size: 192,
            peak_lr: 1e-5,
            total_steps: 2000,
            warmup_steps: 100,
            min_lr: 0.0,
            eval_interval: 100,
            ..Self::phase1()
        }
    }

    /// Small-data variant of [`TrainConfig::phase1`] for synthetic runs:
    /// 2000 steps, warmup kept at 5%, min_lr kept at 1/20 of the peak, a
    /// larger peak rate, and lighter regularization.
    pub fn phase1_desk() -> Self {
        Self {
            peak_lr: 6e-3,
            weight_decay: 1e-4,
            feature_dropout: 0.0,
            total_steps: 2000,
            warmup_steps: 100,
            min_lr: 3e-4,
            eval_interval: 100,
            ..Self::phase1()
        }
    }

    pub fn schedule(&self) -> Schedule {
        Schedule {
            peak_lr: self.peak_lr,
            min_lr: self.min_lr,
            warmup_steps: self.warmup_steps,
            total_steps: self.total_steps,
        }
    }

    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
            decay_norm: self.decay_norm,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.into()));
        if self.batch_size < 2 {
            return bad("batch_size must be at least 2 for batch norm");
        }
        if self.total_steps == 0 {
            return bad("total_steps must be positive");
        }
        if self.warmup_steps > self.total_steps {
            return bad("warmup_steps must not exceed total_steps");
        }
        if !(self.min_lr >= 0.0 && self.min_lr <= self.peak_lr) {
            return bad("need 0 <= min_lr <= peak_lr");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("betas must lie in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.feature_dropout) {
            return bad("feature_dropout must lie in [0, 1)");
        }
        if self.weight_decay < 0.0 {
            return bad("weight_decay must be nonnegative");
        }
        if self.eval_interval == 0 {
            return bad("eval_interval must be positive");
        }
        Ok(())
    }
}

/// Learning rate at a zero-based step under `cfg`'s schedule.
pub fn lr_at(step: usize, cfg: &TrainConfig) -> Result<f64> {
    cfg.schedule().lr_at(step)
}

/// Mean squared error over the entries selected by `mask` (all when `None`).
pub fn mse_loss(pred: &[f64], target: &[f64], mask: Option<&[bool]>) -> Result<f64> {
    Ok(mse_with_grad(pred, target, mask, false)?.0)
}

/// Loss and its gradient w.r.t. `pred`.
pub fn mse_loss_grad(pred: &[f64], target: &[f64], mask: Option<&[bool]>) -> Result<(f64, Vec<f64>)> {
    let (loss, grad) = mse_with_grad(pred, target, mask, true)?;
    Ok((loss, grad.expect("requested")))
}

fn mse_with_grad(pred: &[f64], target: &[f64], mask: Option<&[bool]>, want: bool) -> Result<(f64, Option<Vec<f64>>)> {
    if pred.len() != target.len() {
        return Err(Error::LengthMismatch {
            expected: target.len(),
            actual: pred.len(),
        });
    }
    if let Some(m) = mask {
        if m.len() != pred.len() {
            return Err(Error::LengthMismatch {
                expected: pred.len(),
                actual: m.len(),
            });
        }
    }
    let keep = |i: usize| mask.is_none_or(|m| m[i]);
    let count = (0..pred.len()).filter(|&i| keep(i)).count();
    if count == 0 {
        return Err(Error::EmptyMask);
    }
    let mut sum = 0.0;
    for i in 0..pred.len() {
        if keep(i) {
            let r = pred[i] - target[i];
            sum += r * r;
        }
    }
    let grad = want.then(|| {
        let scale = 2.0 / count as f64;
        (0..pred.len())
            .map(|i| if keep(i) { scale * (pred[i] - target[i]) } else { 0.0 })
            .collect()
    });
    Ok((sum / count as f64, grad))
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    /// Number of optimizer steps completed.
    pub step: usize,
    /// Learning rate used for the last step.
    pub lr: f64,
    /// Mean minibatch loss since the previous record.
    pub train_mse: f64,
    pub val_mse: Option<f64>,
    pub val_median_r2: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Head with the best validation median R² (the final head when there
    /// is no validation data).
    pub best: EncodingHead,
    pub best_step: usize,
    pub best_val_r2: Option<f64>,
    pub last: EncodingHead,
    pub log: Vec<MetricsRecord>,
}

/// Evaluation-mode predictions for `indices`, computed in chunks.
pub fn predict_indices(
    head: &EncodingHead,
    data: &SampleSet,
    indices: &[usize],
    group: bool,
    chunk: usize,
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(indices.len() * data.activity_dim);
    for part in indices.chunks(chunk.max(1)) {
        let batch = if group {
            data.group_batch(part)
        } else {
            data.batch(part)
        };
        out.extend(head.predict(&batch)?);
    }
    Ok(out)
}

/// Validation MSE and pooled median R² over `indices`.
pub fn evaluate(
    head: &EncodingHead,
    data: &SampleSet,
    indices: &[usize],
    mask: LossMask,
) -> Result<(f64, Option<f64>)> {
    let pred = predict_indices(head, data, indices, false, 256)?;
    let target = data.targets(indices);
    let loss_mask = match mask {
        LossMask::None => None,
        LossMask::SubjectValid => Some(data.loss_mask(indices)),
    };
    let mse = mse_loss(&pred, &target, loss_mask.as_deref())?;
    let subjects: Vec<usize> = indices.iter().map(|&i| data.subjects[i]).collect();
    let report = metrics::build_report(
        &pred,
        &target,
        &subjects,
        data.num_subjects,
        data.activity_dim,
        None,
        &[],
    )?;
    Ok((mse, report.group_median))
}

/// Hands out minibatches by walking shuffled epochs. A lone leftover sample
/// at the end of an epoch is skipped.
struct BatchStream {
    pool: Vec<usize>,
    order: Vec<usize>,
    cursor: usize,
    batch_size: usize,
    rng: crate::Rng,
}

impl BatchStream {
    fn new(pool: Vec<usize>, batch_size: usize, seed: u64) -> Self {
        let mut s = Self {
            order: pool.clone(),
            pool,
            cursor: 0,
            batch_size,
            rng: rng_from_seed(seed),
        };
        s.reshuffle();
        s
    }

    fn reshuffle(&mut self) {
        self.order.copy_from_slice(&self.pool);
        self.order.shuffle(&mut self.rng);
        self.cursor = 0;
    }

    fn next_batch(&mut self) -> Vec<usize> {
        if self.order.len() - self.cursor < 2 {
            self.reshuffle();
        }
        let end = (self.cursor + self.batch_size).min(self.order.len());
        let out = self.order[self.cursor..end].to_vec();
        self.cursor = end;
        out
    }
}

/// Trains `head` on the train split of `data`, evaluating on the val split
/// every `cfg.eval_interval` steps and after the last step. The embedding
/// is never modified. `on_record` sees each log line as it is produced.
pub fn train(
    cfg: &TrainConfig,
    mut head: EncodingHead,
    data: &SampleSet,
    split: &SplitAssignment,
    mut on_record: impl FnMut(&MetricsRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if head.activity_dim() != data.activity_dim || head.layer_shapes() != data.layer_shapes {
        return Err(Error::InvalidConfig("head and dataset dimensions differ".into()));
    }
    if head.num_subjects() < data.num_subjects {
        return Err(Error::SubjectOutOfRange {
            subject: data.num_subjects - 1,
            num_subjects: head.num_subjects(),
        });
    }
    if split.labels.len() != data.len() {
        return Err(Error::LengthMismatch {
            expected: data.len(),
            actual: split.labels.len(),
        });
    }
    let train_idx = split.indices(SplitLabel::Train);
    let val_idx = split.indices(SplitLabel::Val);
    if train_idx.len() < 2 {
        return Err(Error::BatchTooSmall(train_idx.len()));
    }

    // Independent streams for batching and dropout.
    let mut batches = BatchStream::new(train_idx, cfg.batch_size, cfg.seed);
    let mut dropout_rng = rng_from_seed(cfg.seed ^ 0x5DEE_CE66_D1CE_5EED);
    let adamw = cfg.adamw();
    let schedule = cfg.schedule();
    let mut state = OptimizerState::new(head.trainable().into_iter().map(|p| (p.name, p.values.len())));
    let frozen: Vec<bool> = head
        .trainable()
        .iter()
        .map(|p| cfg.freeze_shared && p.name != "encoder.subject_weight")
        .collect();

    let mut log = Vec::new();
    let mut best: Option<(f64, usize, EncodingHead)> = None;
    let mut loss_acc = 0.0;
    let mut loss_count = 0usize;

    for step in 0..cfg.total_steps {
        let lr = schedule.lr_at(step)?;
        let idx = batches.next_batch();
        let batch: Batch = data.batch(&idx);
        let target = data.targets(&idx);
        let mask = match cfg.loss_mask {
            LossMask::None => None,
            LossMask::SubjectValid => Some(data.loss_mask(&idx)),
        };
        let fwd = head.forward(&batch, Mode::Train, cfg.feature_dropout, &mut dropout_rng)?;
        let (loss, dpred) = mse_loss_grad(&fwd.predictions, &target, mask.as_deref())?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteGradient { array: "loss".into() });
        }
        let grads = head.backward(&batch, &fwd, &dpred, false)?;
        if !cfg.freeze_shared {
            head.absorb_batch_stats(&fwd);
        }
        {
            let mut params = head.trainable_mut();
            adamw_step(&mut params, &grads.arrays(), &frozen, &mut state, lr, &adamw)?;
        }
        loss_acc += loss;
        loss_count += 1;

        let done = step + 1;
        if done % cfg.eval_interval == 0 || done == cfg.total_steps {
            let (val_mse, val_r2) = if val_idx.is_empty() {
                (None, None)
            } else {
                let (m, r) = evaluate(&head, data, &val_idx, cfg.loss_mask)?;
                (Some(m), r)
            };
            let record = MetricsRecord {
                step: done,
                lr,
                train_mse: loss_acc / loss_count as f64,
                val_mse,
                val_median_r2: val_r2,
            };
            loss_acc = 0.0;
            loss_count = 0;
            on_record(&record);
            log.push(record);
            let score = val_r2.unwrap_or(f64::NEG_INFINITY);
            if best.as_ref().is_none_or(|(b, _, _)| score > *b) {
                best = Some((score, done, head.clone()));
            }
        }
    }

    let (score, best_step, best_head) = best.expect("at least one record is logged");
    Ok(TrainOutcome {
        best: best_head,
        best_step,
        best_val_r2: score.is_finite().then_some(score),
        last: head,
        log,
    })
}

/// Numbers of samples that [`BatchStream`] yields per step; exposed for tests.
#[doc(hidden)]
pub fn batch_sizes(pool: usize, batch_size: usize, steps: usize, seed: u64) -> Vec<usize> {
    let mut s = BatchStream::new((0..pool).collect(), batch_size, seed);
    (0..steps).map(|_| s.next_batch().len()).collect()
}
