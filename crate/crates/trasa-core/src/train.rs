//! The training loop: decayed Adam schedule, mean-over-batch gradients with
//! chunked parallel accumulation, per-epoch validation, best-checkpoint
//! retention with patience-based early stopping, and divergence detection.

use std::fmt;
use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::pipeline::{batches, mix_seed, Instance};
use crate::error::{Error, Result};
use crate::eval::evaluate;
use crate::model::{init_parameters, instance_gradients, ModelConfig};
use crate::parallel::{map_collect, map_collect_seq};
use crate::scalar::Scalar;
use crate::tensor::adam::{AdamConfig, AdamState};
use crate::tensor::store::TensorStore;

/// Instances whose gradients are held in memory at once inside a batch.
/// Bounds peak memory while leaving enough work to parallelize; the fold
/// order over chunks is fixed, so results do not depend on this value's
/// relation to worker count.
const GRADIENT_CHUNK: usize = 32;

/// Optimizer schedule and loop control.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Learning-rate multiplier applied after every `lr_decay_every` epochs.
    pub lr_decay_factor: f64,
    pub lr_decay_every: usize,
    /// Additive L2 coefficient fed to the optimizer.
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Consecutive epochs without a validation P@20 improvement before
    /// training stops (ignored when there is no validation set).
    pub patience: usize,
    pub seed: u64,
    /// Optional stop: end training once training-set P@1 reaches this level
    /// (used by memorization probes).
    pub target_train_p1: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            lr_decay_factor: 0.1,
            lr_decay_every: 3,
            weight_decay: 1e-5,
            batch_size: 512,
            max_epochs: 30,
            patience: 3,
            seed: 0,
            target_train_p1: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning rate must be positive and finite, got {}",
                self.learning_rate
            )));
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor <= 1.0) {
            return Err(Error::Config(format!(
                "decay factor must lie in (0,1], got {}",
                self.lr_decay_factor
            )));
        }
        if self.lr_decay_every == 0 {
            return Err(Error::Config("decay interval must be at least 1 epoch".into()));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::Config(format!(
                "weight decay must be non-negative, got {}",
                self.weight_decay
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("at least one epoch is required".into()));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        if let Some(t) = self.target_train_p1 {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::Config(format!("target P@1 must lie in [0,1], got {t}")));
            }
        }
        Ok(())
    }
}

/// The step schedule: the rate is multiplied by the decay factor once per
/// completed interval, so with defaults epochs 0–2 run at 0.01, 3–5 at
/// 0.001, 6–8 at 0.0001.
pub fn learning_rate_at(cfg: &TrainConfig, epoch: usize) -> f64 {
    cfg.learning_rate * cfg.lr_decay_factor.powi((epoch / cfg.lr_decay_every) as i32)
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    /// Instance-weighted mean training loss over the epoch.
    pub train_loss: f64,
    /// NaN when no validation set was given.
    pub val_p20: f64,
    pub val_mrr20: f64,
    pub seconds: f64,
}

impl fmt::Display for EpochRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "epoch={} lr={} loss={} val_p20={} val_mrr20={} seconds={}",
            self.epoch, self.lr, self.train_loss, self.val_p20, self.val_mrr20, self.seconds
        )
    }
}

/// Everything a finished run hands back.
#[derive(Debug, Clone)]
pub struct TrainOutcome<S> {
    /// Parameters of the best validation epoch (the final epoch when no
    /// validation set was given).
    pub store: TensorStore<S>,
    pub log: Vec<EpochRecord>,
    pub best_epoch: usize,
    /// NaN when no validation set was given.
    pub best_val_p20: f64,
    pub stopped_early: bool,
    pub epochs_run: usize,
}

fn accumulate<S: Scalar>(total: &mut [Vec<S>], part: &[Vec<S>]) {
    for (acc, p) in total.iter_mut().zip(part) {
        for (a, &v) in acc.iter_mut().zip(p) {
            *a = *a + v;
        }
    }
}

fn batch_gradients_with<S, M>(
    map: M,
    store: &TensorStore<S>,
    batch: &[usize],
) -> Result<(f64, Vec<Vec<S>>)>
where
    S: Scalar,
    M: Fn(&[usize]) -> Vec<Result<(f64, Vec<Vec<S>>)>>,
{
    if batch.is_empty() {
        return Err(Error::Contract("a gradient batch cannot be empty".into()));
    }
    let mut total: Vec<Vec<S>> =
        store.entries().iter().map(|e| vec![S::zero(); e.data.len()]).collect();
    let mut loss_sum = 0.0;
    for chunk in batch.chunks(GRADIENT_CHUNK) {
        for r in map(chunk) {
            let (loss, grads) = r?;
            loss_sum += loss;
            accumulate(&mut total, &grads);
        }
    }
    // The objective is the mean over the batch.
    let inv = S::from_f64(1.0 / batch.len() as f64);
    for g in &mut total {
        for v in g.iter_mut() {
            *v = *v * inv;
        }
    }
    Ok((loss_sum / batch.len() as f64, total))
}

fn instance_term<S: Scalar>(
    store: &TensorStore<S>,
    cfg: &ModelConfig,
    dataset: &[Instance],
    idx: usize,
    dropout_base: Option<u64>,
) -> Result<(f64, Vec<Vec<S>>)> {
    let inst = &dataset[idx];
    let mut rng = dropout_base.map(|base| ChaCha8Rng::seed_from_u64(mix_seed(base, idx as u64)));
    instance_gradients(store, cfg, &inst.prefix, inst.label, rng.as_mut())
}

/// Mean loss and mean gradients over one batch of dataset indices. Each
/// instance's dropout stream is keyed by (base, dataset index), so results
/// are independent of batch composition and execution order.
pub fn batch_gradients<S: Scalar>(
    store: &TensorStore<S>,
    cfg: &ModelConfig,
    dataset: &[Instance],
    batch: &[usize],
    dropout_base: Option<u64>,
) -> Result<(f64, Vec<Vec<S>>)> {
    batch_gradients_with(
        |chunk| map_collect(chunk, |&idx| instance_term(store, cfg, dataset, idx, dropout_base)),
        store,
        batch,
    )
}

/// Sequential twin of [`batch_gradients`]; bit-identical results, used for
/// benchmarking the two execution modes.
pub fn batch_gradients_seq<S: Scalar>(
    store: &TensorStore<S>,
    cfg: &ModelConfig,
    dataset: &[Instance],
    batch: &[usize],
    dropout_base: Option<u64>,
) -> Result<(f64, Vec<Vec<S>>)> {
    batch_gradients_with(
        |chunk| {
            map_collect_seq(chunk, |&idx| instance_term(store, cfg, dataset, idx, dropout_base))
        },
        store,
        batch,
    )
}

/// Train a fresh model on `train_set`. Per epoch: deterministic shuffle,
/// one optimizer step per batch on the batch-mean gradients, then (when a
/// validation set is given) a P@20/MRR@20 pass that drives best-checkpoint
/// retention and early stopping.
pub fn train<S: Scalar>(
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    train_set: &[Instance],
    valid_set: &[Instance],
) -> Result<TrainOutcome<S>> {
    model_cfg.validate()?;
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Input("the training set is empty".into()));
    }

    let mut store = init_parameters::<S>(model_cfg, cfg.seed)?;
    let mut adam = AdamState::new(
        &store,
        AdamConfig { weight_decay: cfg.weight_decay, ..AdamConfig::default() },
    );
    let mut best: Option<(f64, usize, TensorStore<S>)> = None;
    let mut since_best = 0usize;
    let mut log: Vec<EpochRecord> = Vec::new();
    let mut stopped_early = false;

    for epoch in 0..cfg.max_epochs {
        let started = Instant::now();
        let lr = learning_rate_at(cfg, epoch);
        let dropout_base =
            (model_cfg.dropout > 0.0).then(|| mix_seed(cfg.seed, epoch as u64));

        let mut loss_weighted = 0.0;
        let mut seen = 0usize;
        for (batch_idx, batch) in
            batches(train_set.len(), cfg.batch_size, cfg.seed, epoch)?.into_iter().enumerate()
        {
            let step = batch_gradients(&store, model_cfg, train_set, &batch, dropout_base)
                .and_then(|(loss, grads)| {
                    if !loss.is_finite() {
                        return Err(Error::Numeric(format!("batch loss is {loss}")));
                    }
                    adam.step(&mut store, &grads, lr)?;
                    Ok(loss)
                });
            let loss = match step {
                Ok(loss) => loss,
                // Any numeric breakdown inside a training step is divergence;
                // report where it happened.
                Err(Error::Numeric(_)) => return Err(Error::Diverged { epoch, batch: batch_idx }),
                Err(e) => return Err(e),
            };
            loss_weighted += loss * batch.len() as f64;
            seen += batch.len();
        }
        let train_loss = loss_weighted / seen as f64;

        let (val_p20, val_mrr20) = if valid_set.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            let report = evaluate(&store, model_cfg, valid_set, &[20])?;
            (
                report.precision_at(20).expect("requested cutoff"),
                report.mrr_at(20).expect("requested cutoff"),
            )
        };
        log.push(EpochRecord {
            epoch,
            lr,
            train_loss,
            val_p20,
            val_mrr20,
            seconds: started.elapsed().as_secs_f64(),
        });

        if !valid_set.is_empty() {
            let improved = best.as_ref().map_or(true, |(b, _, _)| val_p20 > *b);
            if improved {
                best = Some((val_p20, epoch, store.clone()));
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= cfg.patience {
                    stopped_early = true;
                    break;
                }
            }
        }

        if let Some(threshold) = cfg.target_train_p1 {
            let report = evaluate(&store, model_cfg, train_set, &[1])?;
            if report.precision_at(1).expect("requested cutoff") >= threshold {
                stopped_early = true;
                break;
            }
        }
    }

    let epochs_run = log.len();
    let (best_epoch, best_val_p20, final_store) = match best {
        Some((p, e, s)) => (e, p, s),
        None => (epochs_run.saturating_sub(1), f64::NAN, store),
    };
    Ok(TrainOutcome {
        store: final_store,
        log,
        best_epoch,
        best_val_p20,
        stopped_early,
        epochs_run,
    })
}

pub const TRAIN_LOG_HEADER: &str = "# trasa-train-log v1";

/// Persist a training log as versioned `key=value` lines.
pub fn write_train_log(path: &Path, log: &[EpochRecord]) -> Result<()> {
    let mut out = String::from(TRAIN_LOG_HEADER);
    out.push('\n');
    for rec in log {
        out.push_str(&rec.to_string());
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Read back a training log written by [`write_train_log`].
pub fn read_train_log(path: &Path) -> Result<Vec<EpochRecord>> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Input(format!("cannot read {}: {e}", path.display())))?;
    let mut lines = text.lines();
    if lines.next() != Some(TRAIN_LOG_HEADER) {
        return Err(Error::Format(format!(
            "{}: not a training log (missing {TRAIN_LOG_HEADER:?})",
            path.display()
        )));
    }
    let mut log = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let mut rec = EpochRecord {
            epoch: 0,
            lr: f64::NAN,
            train_loss: f64::NAN,
            val_p20: f64::NAN,
            val_mrr20: f64::NAN,
            seconds: f64::NAN,
        };
        for pair in line.split(' ') {
            let (k, v) = pair.split_once('=').ok_or_else(|| {
                Error::Format(format!("{}: line {}: bad field {pair:?}", path.display(), i + 2))
            })?;
            let parse_f = || {
                v.parse::<f64>().map_err(|_| {
                    Error::Format(format!("{}: line {}: bad number {v:?}", path.display(), i + 2))
                })
            };
            match k {
                "epoch" => {
                    rec.epoch = v.parse().map_err(|_| {
                        Error::Format(format!(
                            "{}: line {}: bad epoch {v:?}",
                            path.display(),
                            i + 2
                        ))
                    })?
                }
                "lr" => rec.lr = parse_f()?,
                "loss" => rec.train_loss = parse_f()?,
                "val_p20" => rec.val_p20 = parse_f()?,
                "val_mrr20" => rec.val_mrr20 = parse_f()?,
                "seconds" => rec.seconds = parse_f()?,
                other => {
                    return Err(Error::Format(format!(
                        "{}: line {}: unknown field {other:?}",
                        path.display(),
                        i + 2
                    )))
                }
            }
        }
        log.push(rec);
    }
    Ok(log)
}
