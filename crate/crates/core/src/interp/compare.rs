// SPDX-License-Identifier: MIT OR Apache-2.0

use serde::{Deserialize, Serialize};

use super::flow::{aggregate_logit_flow, FlowNormalization, LogitFlowMap};
use super::patch::{activation_patch, corrupt_subject, PatchResult};
use crate::data::{HopKind, HopQuery, Vocab};
use crate::error::Result;
use crate::model::Transformer;
use crate::numerics::{argmax, Tensor};

/// How a two-hop query was answered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaseClass {
    Correct,
    /// Predicted the bridge entity `e2`.
    Bridge,
    /// Predicted the first subject's own `r2` answer.
    OtherConflict,
    Other,
}

pub fn classify(query: &HopQuery, predicted: usize, vocab: &Vocab) -> CaseClass {
    let id = vocab.entity_index(predicted);
    if id == Some(query.e3) {
        CaseClass::Correct
    } else if id == Some(query.e2) {
        CaseClass::Bridge
    } else if id.is_some() && id == query.conflict_r2 {
        CaseClass::OtherConflict
    } else {
        CaseClass::Other
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompareConfig {
    /// Top-neuron count; `None` uses the size-dependent default.
    pub k: Option<usize>,
    /// Applied to each query's map before averaging.
    pub normalization: FlowNormalization,
    pub patch: bool,
    /// Cap on queries analysed per case set (all are classified).
    pub max_per_set: Option<usize>,
    pub seed: u64,
}

impl Default for CompareConfig {
    fn default() -> Self {
        Self {
            k: None,
            normalization: FlowNormalization::ShareOfTotal,
            patch: true,
            max_per_set: None,
            seed: 0,
        }
    }
}

/// Aggregates over one case set. Maps target the model's own prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseSetReport {
    pub count: usize,
    pub analysed: usize,
    /// Set when the set is empty and no aggregate exists.
    pub insufficient: bool,
    pub flow: Option<LogitFlowMap>,
    pub patch_effects: Option<Tensor>,
    /// Share of attention importance at the `r1` span.
    pub r1_share: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseComparison {
    pub total: usize,
    pub correct: usize,
    pub bridge: usize,
    pub other_conflict: usize,
    pub other: usize,
    pub correct_set: CaseSetReport,
    pub bridge_set: CaseSetReport,
    pub classes: Vec<CaseClass>,
}

impl CaseComparison {
    /// Percentages of correct, bridge and other-conflict predictions.
    pub fn split(&self) -> [f64; 3] {
        let t = self.total.max(1) as f64;
        [self.correct, self.bridge, self.other_conflict].map(|c| 100.0 * c as f64 / t)
    }

    /// Bridge-set r1 share minus correct-set r1 share, when both exist.
    pub fn r1_gap(&self) -> Option<f64> {
        Some(self.bridge_set.r1_share? - self.correct_set.r1_share?)
    }
}

fn summarize(
    model: &Transformer,
    vocab: &Vocab,
    cases: &[(&HopQuery, usize)],
    config: &CompareConfig,
) -> Result<CaseSetReport> {
    let take = config.max_per_set.unwrap_or(cases.len()).min(cases.len());
    let cases = &cases[..take];
    if cases.is_empty() {
        return Ok(CaseSetReport {
            count: 0,
            analysed: 0,
            insufficient: true,
            flow: None,
            patch_effects: None,
            r1_share: None,
        });
    }
    let mut maps = Vec::with_capacity(cases.len());
    let mut patches: Vec<PatchResult> = Vec::new();
    for (i, &(q, pred)) in cases.iter().enumerate() {
        let trace = model.trace(&q.prompt)?;
        maps.push(aggregate_logit_flow(model, &trace, pred, config.k, Some(&q.spans), config.normalization)?);
        if config.patch {
            let corrupt = corrupt_subject(vocab, &q.prompt, &q.spans, config.seed.wrapping_add(i as u64))?;
            patches.push(activation_patch(model, &q.prompt, &corrupt, pred)?);
        }
    }
    let flow = LogitFlowMap::mean(&maps)?;
    Ok(CaseSetReport {
        count: cases.len(),
        analysed: cases.len(),
        insufficient: false,
        r1_share: flow.attn_share("r1"),
        flow: Some(flow),
        patch_effects: if patches.is_empty() {
            None
        } else {
            Some(PatchResult::mean_effects(&patches)?)
        },
    })
}

/// Classifies every two-hop query by the model's top prediction and
/// compares logit flow and patching between correct and bridge-error cases.
/// Other query kinds are ignored.
pub fn compare_case_sets(
    model: &Transformer,
    vocab: &Vocab,
    queries: &[HopQuery],
    config: &CompareConfig,
) -> Result<CaseComparison> {
    let two_hop: Vec<&HopQuery> = queries.iter().filter(|q| q.kind == HopKind::TwoHop).collect();
    let mut classes = Vec::with_capacity(two_hop.len());
    let mut correct = Vec::new();
    let mut bridge = Vec::new();
    let (mut other_conflict, mut other) = (0, 0);
    for q in &two_hop {
        let logits = model.logits(&q.prompt)?;
        let pred = argmax(logits.row(logits.rows() - 1));
        let class = classify(q, pred, vocab);
        match class {
            CaseClass::Correct => correct.push((*q, pred)),
            CaseClass::Bridge => bridge.push((*q, pred)),
            CaseClass::OtherConflict => other_conflict += 1,
            CaseClass::Other => other += 1,
        }
        classes.push(class);
    }
    let mut correct_set = summarize(model, vocab, &correct, config)?;
    correct_set.count = correct.len();
    let mut bridge_set = summarize(model, vocab, &bridge, config)?;
    bridge_set.count = bridge.len();
    Ok(CaseComparison {
        total: two_hop.len(),
        correct: correct.len(),
        bridge: bridge.len(),
        other_conflict,
        other,
        correct_set,
        bridge_set,
        classes,
    })
}
