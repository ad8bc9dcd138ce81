// SPDX-License-Identifier: MIT OR Apache-2.0

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Span, SpanRole, Vocab};
use crate::error::{Error, Result};
use crate::model::{Intervention, Transformer};
use crate::numerics::{rng, Tensor};

/// Definition of the effect reported by [`activation_patch`].
pub const PATCH_METRIC: &str =
    "normalized logit restoration: (logit_s(patched) - logit_s(corrupt)) / (logit_s(clean) - logit_s(corrupt)); \
     raw difference logit_s(patched) - logit_s(corrupt) when |denominator| < 1e-12";

const DEGENERATE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchResult {
    /// `layers × positions`.
    pub effects: Tensor,
    pub metric: String,
    pub clean: Vec<usize>,
    pub corrupt: Vec<usize>,
    pub target: usize,
    pub clean_logit: f64,
    pub corrupt_logit: f64,
}

impl PatchResult {
    /// True when clean and corrupt runs give the same target logit, in which
    /// case effects are raw differences.
    pub fn degenerate(&self) -> bool {
        (self.clean_logit - self.corrupt_logit).abs() < DEGENERATE
    }

    /// Cell-wise mean over results of equal shape.
    pub fn mean_effects(results: &[PatchResult]) -> Result<Tensor> {
        let first = results.first().ok_or(Error::Absent("patch result to average"))?;
        let mut acc = first.effects.clone();
        for r in &results[1..] {
            acc.add_assign(&r.effects)?;
        }
        Ok(acc.scale(1.0 / results.len() as f64))
    }
}

fn last_logit(logits: &Tensor, target: usize) -> f64 {
    logits.get2(logits.rows() - 1, target)
}

/// Runs `corrupt` once per (layer, position), each time overwriting that
/// layer's output with the clean run's value, and records how much of the
/// clean target logit is restored.
pub fn activation_patch(model: &Transformer, clean: &[usize], corrupt: &[usize], target: usize) -> Result<PatchResult> {
    if clean.len() != corrupt.len() {
        return Err(Error::Patch(format!(
            "clean prompt has {} tokens, corrupt prompt {}",
            clean.len(),
            corrupt.len()
        )));
    }
    if clean.is_empty() {
        return Err(Error::Patch("empty prompts".into()));
    }
    if target >= model.config.vocab_size {
        return Err(Error::Index {
            what: "target token",
            index: target,
            limit: model.config.vocab_size,
        });
    }
    let clean_trace = model.trace(clean)?;
    let clean_logit = last_logit(&clean_trace.logits, target);
    let corrupt_logit = last_logit(&model.logits(corrupt)?, target);
    let den = clean_logit - corrupt_logit;
    let (layers, t) = (clean_trace.num_layers(), clean.len());
    let mut effects = Tensor::zeros(&[layers, t]);
    for l in 0..layers {
        for p in 0..t {
            let iv = Intervention {
                layer: l,
                row: p,
                value: clean_trace.layer(l).output.row(p).to_vec(),
            };
            let diff = last_logit(&model.logits_with(corrupt, &iv)?, target) - corrupt_logit;
            effects.data_mut()[l * t + p] = if den.abs() < DEGENERATE { diff } else { diff / den };
        }
    }
    Ok(PatchResult {
        effects,
        metric: PATCH_METRIC.into(),
        clean: clean.to_vec(),
        corrupt: corrupt.to_vec(),
        target,
        clean_logit,
        corrupt_logit,
    })
}

/// Copy of `prompt` with the entity token of the first entity span replaced
/// by a different entity drawn with `seed`. Entities are one token (after
/// the optional marker), so the length is preserved.
pub fn corrupt_subject(vocab: &Vocab, prompt: &[usize], spans: &[Span], seed: u64) -> Result<Vec<usize>> {
    let span = spans
        .iter()
        .find(|s| s.role == SpanRole::Entity)
        .ok_or_else(|| Error::Span("prompt has no entity span".into()))?;
    let pos = span.end.checked_sub(1).filter(|&p| p < prompt.len() && p >= span.start);
    let pos = pos.ok_or_else(|| Error::Span(format!("entity span {} outside the prompt", span.label)))?;
    let old = vocab
        .entity_index(prompt[pos])
        .ok_or_else(|| Error::Span(format!("token at {pos} is not an entity")))?;
    let n = vocab.spec().n_entities;
    if n < 2 {
        return Err(Error::Config("corruption needs at least two entities".into()));
    }
    let mut r = rng(seed);
    let mut k = r.random_range(0..n - 1);
    if k >= old {
        k += 1;
    }
    let mut out = prompt.to_vec();
    out[pos] = vocab.entity(k)?;
    Ok(out)
}
