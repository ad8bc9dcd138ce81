// SPDX-License-Identifier: MIT OR Apache-2.0

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::{Example, ExampleKind, EOS};
use crate::error::Result;
use crate::model::{Batch, Transformer};
use crate::numerics::{argmax, Scalar};

/// Correct/total counts per example kind.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Accuracy {
    pub counts: BTreeMap<ExampleKind, (usize, usize)>,
}

impl Accuracy {
    pub fn record(&mut self, kind: ExampleKind, correct: bool) {
        let e = self.counts.entry(kind).or_default();
        e.0 += usize::from(correct);
        e.1 += 1;
    }

    /// Fraction correct for `kind`, `None` when no example of that kind was seen.
    pub fn of(&self, kind: ExampleKind) -> Option<f64> {
        self.counts
            .get(&kind)
            .filter(|c| c.1 > 0)
            .map(|&(c, t)| c as f64 / t as f64)
    }

    pub fn overall(&self) -> Option<f64> {
        let (c, t) = self
            .counts
            .values()
            .fold((0, 0), |(a, b), &(c, t)| (a + c, b + t));
        (t > 0).then(|| c as f64 / t as f64)
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }
}

const EVAL_BATCH: usize = 256;

/// Per-example exact-match verdicts. An example is correct iff, feeding
/// the gold prefix, every answer token (digits and end marker) is the
/// argmax prediction. Under causal attention and deterministic argmax this
/// equals greedy decoding followed by an exact comparison.
pub fn exact_match_verdicts<S: Scalar>(model: &Transformer<S>, examples: &[Example]) -> Result<Vec<bool>> {
    let mut out = Vec::with_capacity(examples.len());
    for chunk in examples.chunks(EVAL_BATCH) {
        let seqs: Vec<Vec<usize>> = chunk.iter().map(Example::sequence).collect();
        let batch = Batch::new(&seqs);
        let logits = model.logits_batch(&batch)?;
        for (e, seg) in chunk.iter().zip(&batch.segments) {
            let p = e.prompt_ids.len();
            let ok = p > 0
                && !e.answer_ids.is_empty()
                && e.answer_ids
                    .iter()
                    .enumerate()
                    .all(|(k, &tok)| argmax(logits.row(seg.start + p - 1 + k)) == tok);
            out.push(ok);
        }
    }
    Ok(out)
}

/// Exact-match accuracy by example kind.
pub fn evaluate_exact_match<S: Scalar>(model: &Transformer<S>, examples: &[Example]) -> Result<Accuracy> {
    let verdicts = exact_match_verdicts(model, examples)?;
    let mut acc = Accuracy::default();
    for (e, ok) in examples.iter().zip(verdicts) {
        acc.record(e.kind, ok);
    }
    Ok(acc)
}

/// Greedy decoding of one example's answer, compared token by token.
pub fn greedy_exact_match<S: Scalar>(model: &Transformer<S>, example: &Example) -> Result<bool> {
    let out = model.generate_greedy(&example.prompt_ids, example.answer_ids.len(), Some(EOS))?;
    Ok(out[example.prompt_ids.len()..] == example.answer_ids[..])
}
