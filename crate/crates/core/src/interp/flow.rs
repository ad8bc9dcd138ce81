// SPDX-License-Identifier: MIT OR Apache-2.0

use serde::{Deserialize, Serialize};

use super::neurons::{default_top_k, rank, score_attention_neurons, score_ffn_neurons, shallow_ffn_attribution, NeuronRef};
use crate::data::{check_tiling, Span};
use crate::error::{Error, Result};
use crate::model::{ForwardTrace, Transformer};
use crate::numerics::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FlowNormalization {
    #[default]
    Raw,
    /// Each matrix divided by its own total.
    ShareOfTotal,
}

/// Layer × position (or span) maps of where the logits of `target` come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogitFlowMap {
    pub target: usize,
    pub k: usize,
    /// Column labels: token positions or span labels.
    pub labels: Vec<String>,
    pub normalization: FlowNormalization,
    /// Summed importance of the top-`k` attention neurons by (layer, key position).
    pub attn_importance: Tensor,
    /// Summed importance of the top-`k` last-position FFN neurons by layer.
    pub ffn_importance: Tensor,
    /// Summed shallow FFN attribution by (layer, position).
    pub ffn_attribution: Tensor,
}

/// Sums the columns of a `layers × positions` matrix over each span.
pub fn group_columns(m: &Tensor, spans: &[Span]) -> Result<Tensor> {
    check_tiling(spans, m.cols())?;
    let mut out = Tensor::zeros(&[m.rows(), spans.len()]);
    for l in 0..m.rows() {
        for (j, s) in spans.iter().enumerate() {
            out.data_mut()[l * spans.len() + j] = s.range().map(|p| m.get2(l, p)).sum();
        }
    }
    Ok(out)
}

/// `m` divided by the sum of all its cells; an all-zero matrix stays zero.
pub fn share_of_total(m: &Tensor) -> Tensor {
    let total = m.sum();
    if total == 0.0 {
        m.clone()
    } else {
        m.map(|x| x / total)
    }
}

impl LogitFlowMap {
    fn column(&self, m: &Tensor, label: &str) -> Option<f64> {
        let j = self.labels.iter().position(|l| l == label)?;
        Some((0..m.rows()).map(|l| m.get2(l, j)).sum())
    }

    /// Fraction of the attention-importance total located at `label`.
    pub fn attn_share(&self, label: &str) -> Option<f64> {
        let total = self.attn_importance.sum();
        let col = self.column(&self.attn_importance, label)?;
        (total != 0.0).then(|| col / total)
    }

    /// Fraction of the FFN-attribution total located at `label`.
    pub fn attribution_share(&self, label: &str) -> Option<f64> {
        let total = self.ffn_attribution.sum();
        let col = self.column(&self.ffn_attribution, label)?;
        (total != 0.0).then(|| col / total)
    }

    pub fn normalized(&self, mode: FlowNormalization) -> Self {
        let mut out = self.clone();
        out.normalization = mode;
        if mode == FlowNormalization::ShareOfTotal {
            out.attn_importance = share_of_total(&self.attn_importance);
            out.ffn_importance = share_of_total(&self.ffn_importance);
            out.ffn_attribution = share_of_total(&self.ffn_attribution);
        }
        out
    }

    /// Cell-wise mean of maps sharing labels and shapes.
    pub fn mean(maps: &[LogitFlowMap]) -> Result<Self> {
        let first = maps.first().ok_or(Error::Absent("logit-flow map to average"))?;
        let mut out = first.clone();
        for m in &maps[1..] {
            if m.labels != first.labels || m.attn_importance.shape() != first.attn_importance.shape() {
                return Err(Error::Span("logit-flow maps have different position labels".into()));
            }
            out.attn_importance.add_assign(&m.attn_importance)?;
            out.ffn_importance.add_assign(&m.ffn_importance)?;
            out.ffn_attribution.add_assign(&m.ffn_attribution)?;
        }
        let inv = 1.0 / maps.len() as f64;
        out.attn_importance = out.attn_importance.scale(inv);
        out.ffn_importance = out.ffn_importance.scale(inv);
        out.ffn_attribution = out.ffn_attribution.scale(inv);
        Ok(out)
    }
}

fn place(neurons: &[NeuronRef], layers: usize, t: usize) -> Tensor {
    let mut m = Tensor::zeros(&[layers, t]);
    for n in neurons {
        m.data_mut()[n.layer * t + n.position] += n.importance;
    }
    m
}

/// Logit flow of one prompt towards `target`. `k = None` picks
/// [`default_top_k`] of the attention-neuron count. With `spans`, columns
/// are summed per span.
pub fn aggregate_logit_flow(
    model: &Transformer,
    trace: &ForwardTrace,
    target: usize,
    k: Option<usize>,
    spans: Option<&[Span]>,
    normalization: FlowNormalization,
) -> Result<LogitFlowMap> {
    if let Some(s) = spans {
        check_tiling(s, trace.len())?;
    }
    let (layers, t) = (trace.num_layers(), trace.len());
    let attn = score_attention_neurons(model, trace, target)?;
    let k = k.unwrap_or_else(|| default_top_k(attn.len()));
    let top_attn = rank(attn, k);
    let top_ffn = rank(score_ffn_neurons(model, trace, target)?, k);
    let attribution: Vec<Tensor> = shallow_ffn_attribution(model, trace, &top_attn)?;
    let mut ffn_attr = Tensor::zeros(&[layers, t]);
    for (l, m) in attribution.iter().enumerate() {
        for p in 0..t {
            ffn_attr.data_mut()[l * t + p] = m.row(p).iter().sum();
        }
    }
    let mut map = LogitFlowMap {
        target,
        k,
        labels: (0..t).map(|p| p.to_string()).collect(),
        normalization: FlowNormalization::Raw,
        attn_importance: place(&top_attn, layers, t),
        ffn_importance: place(&top_ffn, layers, t),
        ffn_attribution: ffn_attr,
    };
    if let Some(s) = spans {
        map.attn_importance = group_columns(&map.attn_importance, s)?;
        map.ffn_importance = group_columns(&map.ffn_importance, s)?;
        map.ffn_attribution = group_columns(&map.ffn_attribution, s)?;
        map.labels = s.iter().map(|s| s.label.clone()).collect();
    }
    Ok(map.normalized(normalization))
}
