// SPDX-License-Identifier: MIT OR Apache-2.0

//! Neuron-level analyses: logit lens, FFN and attention neuron
//! decompositions, importance scores, logit-flow maps, activation patching,
//! logit-difference curves and back-attention scores.

mod back_scores;
mod compare;
mod export;
mod flow;
mod lens;
mod logit_diff;
mod neurons;
mod patch;

pub use back_scores::{extract_back_attention_scores, BackAttentionScores};
pub use compare::{classify, compare_case_sets, CaseClass, CaseComparison, CaseSetReport, CompareConfig};
pub use export::{heatmap_svg, matrices_to_csv, write_csv, write_heatmap, MatrixExport};
pub use flow::{aggregate_logit_flow, group_columns, share_of_total, FlowNormalization, LogitFlowMap};
pub use lens::{importance_score, logit_lens, LogitLens};
pub use logit_diff::{logit_difference_curve, LogitDiffCurve, SpanReduce};
pub use neurons::{
    decompose_attention, decompose_ffn, default_top_k, effective_subkey, score_attention_neurons, score_ffn_neurons,
    shallow_ffn_attribution, top_attention_neurons, top_ffn_neurons, NeuronKind, NeuronRef,
};
pub use patch::{activation_patch, corrupt_subject, PatchResult, PATCH_METRIC};
