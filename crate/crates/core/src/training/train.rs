// SPDX-License-Identifier: MIT OR Apache-2.0

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::eval::{evaluate_exact_match, Accuracy};
use crate::data::{Example, ExampleKind};
use crate::error::{Error, Result};
use crate::model::{weights_digest, BackAttentionConfig, Batch, Checkpoint, Transformer};
use crate::numerics::{rng, AdamWConfig, AdamWState, Scalar, Tape};

/// Which next-token predictions enter the loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    /// Every position that has a successor.
    #[default]
    AllTokens,
    /// Only positions whose successor is an answer token.
    AnswerOnly,
}

/// Optional stopping rule evaluated after each evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EarlyStop {
    /// Example kind whose accuracy is monitored.
    pub kind: ExampleKind,
    /// Stop once the monitored accuracy reaches this value.
    #[serde(default)]
    pub target: Option<f64>,
    /// Stop after this many evaluations without improvement.
    #[serde(default)]
    pub patience: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub optimizer: AdamWConfig,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub loss_mode: LossMode,
    /// Parameters whose name starts with any of these prefixes are frozen.
    pub frozen: Vec<String>,
    /// Evaluate every this many epochs (and always after the last one).
    pub eval_every: usize,
    pub early_stop: Option<EarlyStop>,
    /// Directory for periodic and final checkpoints.
    pub checkpoint_dir: Option<PathBuf>,
    /// Save a checkpoint every this many epochs (0 = only the final one).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optimizer: AdamWConfig::default(),
            batch_size: 64,
            epochs: 500,
            seed: 0,
            loss_mode: LossMode::AllTokens,
            frozen: Vec::new(),
            eval_every: 1,
            early_stop: None,
            checkpoint_dir: None,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.eval_every == 0 {
            return Err(Error::Config("eval_every must be at least 1".into()));
        }
        if !(self.optimizer.lr > 0.0 && self.optimizer.lr.is_finite()) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        Ok(())
    }

    pub fn is_frozen(&self, name: &str) -> bool {
        self.frozen.iter().any(|p| name.starts_with(p.as_str()))
    }
}

/// One epoch of training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// Present on evaluation epochs.
    pub accuracy: Option<Accuracy>,
    pub seconds: f64,
}

impl EpochRecord {
    /// `epoch=… loss=… acc.<kind>=…` progress line.
    pub fn progress_line(&self) -> String {
        let mut s = format!("epoch={} loss={:.6}", self.epoch, self.train_loss);
        if let Some(acc) = &self.accuracy {
            for (k, &(c, t)) in &acc.counts {
                s.push_str(&format!(" acc.{}={:.4}", k.name(), c as f64 / t.max(1) as f64));
            }
        }
        s
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    /// Highest accuracy per kind over evaluated epochs, with the epoch.
    pub best: BTreeMap<ExampleKind, (f64, usize)>,
    pub final_accuracy: Option<Accuracy>,
    pub wall_seconds: f64,
    pub checkpoint: Option<PathBuf>,
    pub stopped_early: bool,
}

impl TrainReport {
    pub fn train_losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.train_loss).collect()
    }

    pub fn best_accuracy(&self, kind: ExampleKind) -> Option<f64> {
        self.best.get(&kind).map(|b| b.0)
    }

    pub fn final_accuracy(&self, kind: ExampleKind) -> Option<f64> {
        self.final_accuracy.as_ref()?.of(kind)
    }
}

/// Next-token targets of one packed batch.
pub(crate) fn targets(examples: &[&Example], mode: LossMode) -> Vec<Option<usize>> {
    let mut out = Vec::new();
    for e in examples {
        let seq = e.sequence();
        let first_answer_row = e.prompt_ids.len().saturating_sub(1);
        for i in 0..seq.len() {
            let t = seq.get(i + 1).copied();
            out.push(match mode {
                LossMode::AnswerOnly if i < first_answer_row => None,
                _ => t,
            });
        }
    }
    out
}

/// Mean loss and gradients for one batch.
fn batch_step<S: Scalar>(
    model: &Transformer<S>,
    batch: &[&Example],
    config: &TrainConfig,
    trainable: &[bool],
) -> Result<(f64, crate::numerics::Gradients<S>)> {
    let seqs: Vec<Vec<usize>> = batch.iter().map(|e| e.sequence()).collect();
    let packed = Batch::new(&seqs);
    let mut tape = Tape::new();
    let nodes = model.record(&mut tape, &packed, &|i| trainable[i], None)?;
    let loss = tape.cross_entropy(nodes.logits, &targets(batch, config.loss_mode))?;
    let value = tape.value(loss).data()[0].to_f64_lossy();
    let grads = tape.backward(loss)?;
    Ok((value, grads))
}

/// Batch loss and its gradient for every parameter, keyed by tensor name.
/// Frozen parameters (per `config`) get no gradient.
pub fn loss_and_gradients<S: Scalar>(
    model: &Transformer<S>,
    examples: &[Example],
    config: &TrainConfig,
) -> Result<(f64, Vec<(String, Option<crate::numerics::Tensor<S>>)>)> {
    let names: Vec<String> = model.weights.named().into_iter().map(|(n, _)| n).collect();
    let trainable: Vec<bool> = names.iter().map(|n| !config.is_frozen(n)).collect();
    let refs: Vec<&Example> = examples.iter().collect();
    let (loss, grads) = batch_step(model, &refs, config, &trainable)?;
    let mut grads = grads.into_vec();
    grads.resize(names.len(), None);
    Ok((loss, names.into_iter().zip(grads).collect()))
}

/// Mean training loss over `examples` without updating anything.
pub fn mean_loss<S: Scalar>(model: &Transformer<S>, examples: &[Example], config: &TrainConfig) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for chunk in examples.chunks(256) {
        let refs: Vec<&Example> = chunk.iter().collect();
        let seqs: Vec<Vec<usize>> = chunk.iter().map(Example::sequence).collect();
        let packed = Batch::new(&seqs);
        let mut tape = Tape::new();
        let nodes = model.record(&mut tape, &packed, &|_| false, None)?;
        let t = targets(&refs, config.loss_mode);
        let n = t.iter().filter(|x| x.is_some()).count();
        let loss = tape.cross_entropy(nodes.logits, &t)?;
        total += tape.value(loss).data()[0].to_f64_lossy() * n as f64;
        count += n;
    }
    Ok(if count == 0 { 0.0 } else { total / count as f64 })
}

/// Trains `model` in place. Batches are drawn in a seed-determined order;
/// `observer` sees every epoch record as it completes.
pub fn train<S: Scalar>(
    model: &mut Transformer<S>,
    train_set: &[Example],
    eval_set: &[Example],
    config: &TrainConfig,
    observer: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainReport> {
    config.validate()?;
    for e in train_set.iter().chain(eval_set) {
        model.validate_tokens(&e.prompt_ids)?;
        model.validate_tokens(&e.answer_ids)?;
    }
    let started = Instant::now();
    let names: Vec<String> = model.weights.named().into_iter().map(|(n, _)| n).collect();
    let trainable: Vec<bool> = names.iter().map(|n| !config.is_frozen(n)).collect();
    let shapes: Vec<Vec<usize>> = model.weights.named().iter().map(|(_, t)| t.shape().to_vec()).collect();
    let shape_refs: Vec<&[usize]> = shapes.iter().map(Vec::as_slice).collect();
    let mut opt = AdamWState::<S>::new(config.optimizer, &shape_refs);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut r = rng(config.seed);
    let mut report = TrainReport::default();
    let mut since_best = 0usize;

    for epoch in 1..=config.epochs {
        let t0 = Instant::now();
        order.shuffle(&mut r);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for (b, idx) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&Example> = idx.iter().map(|&i| &train_set[i]).collect();
            let (loss, grads) = batch_step(model, &batch, config, &trainable)?;
            if !loss.is_finite() || !grads.all_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: b,
                    loss,
                });
            }
            let grads = grads.into_vec();
            let grad_refs: Vec<Option<&crate::numerics::Tensor<S>>> = grads
                .iter()
                .zip(&trainable)
                .map(|(g, &t)| if t { g.as_ref() } else { None })
                .collect();
            let mut params: Vec<&mut crate::numerics::Tensor<S>> =
                model.weights.named_mut().into_iter().map(|(_, t)| t).collect();
            opt.step(&mut params, &grad_refs)?;
            loss_sum += loss;
            batches += 1;
        }
        let evaluate = epoch % config.eval_every == 0 || epoch == config.epochs;
        let accuracy = if evaluate && !eval_set.is_empty() {
            Some(evaluate_exact_match(model, eval_set)?)
        } else {
            None
        };
        let mut improved = false;
        if let Some(acc) = &accuracy {
            for (&kind, &(c, t)) in &acc.counts {
                let a = c as f64 / t.max(1) as f64;
                let entry = report.best.entry(kind).or_insert((f64::NEG_INFINITY, 0));
                if a > entry.0 {
                    *entry = (a, epoch);
                    if config.early_stop.as_ref().is_some_and(|s| s.kind == kind) {
                        improved = true;
                    }
                }
            }
        }
        let rec = EpochRecord {
            epoch,
            train_loss: if batches == 0 { 0.0 } else { loss_sum / batches as f64 },
            accuracy: accuracy.clone(),
            seconds: t0.elapsed().as_secs_f64(),
        };
        log::info!("{}", rec.progress_line());
        observer(&rec);
        report.epochs.push(rec);
        if accuracy.is_some() {
            report.final_accuracy = accuracy.clone();
        }
        if let (Some(dir), true) = (&config.checkpoint_dir, config.checkpoint_every > 0) {
            if epoch % config.checkpoint_every == 0 {
                save(model, &dir.join(format!("epoch_{epoch:04}.ckpt")), &report)?;
            }
        }
        if let (Some(stop), Some(acc)) = (&config.early_stop, &accuracy) {
            since_best = if improved { 0 } else { since_best + 1 };
            let hit = stop.target.is_some_and(|t| acc.of(stop.kind).unwrap_or(0.0) >= t);
            let stale = stop.patience.is_some_and(|p| since_best >= p);
            if hit || stale {
                report.stopped_early = epoch < config.epochs;
                break;
            }
        }
    }
    if report.final_accuracy.is_none() && !eval_set.is_empty() && config.epochs > 0 {
        report.final_accuracy = Some(evaluate_exact_match(model, eval_set)?);
    }
    report.wall_seconds = started.elapsed().as_secs_f64();
    if let Some(dir) = &config.checkpoint_dir {
        let path = dir.join("final.ckpt");
        save(model, &path, &report)?;
        report.checkpoint = Some(path);
        let json = serde_json::to_vec_pretty(&report)?;
        crate::io::write_atomic(&dir.join("report.json"), &json)?;
    }
    Ok(report)
}

fn save<S: Scalar>(model: &Transformer<S>, path: &std::path::Path, report: &TrainReport) -> Result<()> {
    Checkpoint::new(model)
        .with_metadata("epochs_run", report.epochs.len())?
        .with_metadata("best", &report.best)?
        .save(path)
}

/// Name prefix of the back-attention tensors.
pub const BACK_ATTENTION_PREFIX: &str = "back_attention.";

/// Adds fresh back attention (zero output projection) to a copy of `base`
/// and trains only its four matrices. Fails if any base tensor changes.
pub fn finetune_back_attention<S: Scalar>(
    base: &Transformer<S>,
    ba: BackAttentionConfig,
    train_set: &[Example],
    eval_set: &[Example],
    config: &TrainConfig,
    observer: &mut dyn FnMut(&EpochRecord),
) -> Result<(Transformer<S>, TrainReport)> {
    if base.back_attention.is_some() {
        return Err(Error::Config("base model already has back attention".into()));
    }
    let mut model = base.clone().with_back_attention(ba, config.seed)?;
    let is_base = |n: &str| !n.starts_with(BACK_ATTENTION_PREFIX);
    let before = weights_digest(&model, is_base);
    let mut cfg = config.clone();
    cfg.frozen = model
        .weights
        .named()
        .into_iter()
        .map(|(n, _)| n)
        .filter(|n| is_base(n))
        .collect();
    let report = train(&mut model, train_set, eval_set, &cfg, observer)?;
    if weights_digest(&model, is_base) != before {
        let changed = model
            .weights
            .named()
            .into_iter()
            .zip(base.weights.named())
            .find(|((_, a), (_, b))| a != b)
            .map(|((n, _), _)| n)
            .unwrap_or_else(|| "unknown".into());
        return Err(Error::FrozenViolation(changed));
    }
    Ok((model, report))
}
