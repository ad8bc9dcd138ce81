// SPDX-License-Identifier: MIT OR Apache-2.0

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::lens::{importance_score, LogitLens};
use crate::error::{Error, Result};
use crate::model::{ForwardTrace, Transformer};
use crate::numerics::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NeuronKind {
    Ffn,
    Attn,
}

/// One neuron's contribution to a sublayer output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeuronRef {
    pub kind: NeuronKind,
    pub layer: usize,
    /// Key position for attention neurons, token position for FFN neurons.
    pub position: usize,
    pub head: Option<usize>,
    /// FFN neuron index, or channel within the head.
    pub index: usize,
    /// `m` for FFN neurons, `α·β` for attention neurons.
    pub coefficient: f64,
    /// Coefficient times subvalue.
    pub vector: Vec<f64>,
    pub importance: f64,
}

impl NeuronRef {
    fn order_key(&self) -> (usize, usize, usize, usize) {
        (self.layer, self.position, self.head.unwrap_or(0), self.index)
    }
}

fn check_cell(trace: &ForwardTrace, layer: usize, position: usize) -> Result<()> {
    if layer >= trace.num_layers() {
        return Err(Error::Index {
            what: "layer",
            index: layer,
            limit: trace.num_layers(),
        });
    }
    if position >= trace.len() {
        return Err(Error::Index {
            what: "position",
            index: position,
            limit: trace.len(),
        });
    }
    Ok(())
}

/// The `N` FFN neurons of one cell; their vectors sum to `F`.
pub fn decompose_ffn(model: &Transformer, trace: &ForwardTrace, layer: usize, position: usize) -> Result<Vec<NeuronRef>> {
    check_cell(trace, layer, position)?;
    let lt = trace.layer(layer);
    let fc2 = &model.weights.layers[layer].fc2;
    let n = model.config.ffn_width;
    let d = model.config.model_dim;
    Ok((0..n)
        .map(|k| {
            let m = lt.coefficients.get2(position, k);
            NeuronRef {
                kind: NeuronKind::Ffn,
                layer,
                position,
                head: None,
                index: k,
                coefficient: m,
                vector: (0..d).map(|o| m * fc2.get2(o, k)).collect(),
                importance: 0.0,
            }
        })
        .collect())
}

/// `β` of every channel at key position `p`: subkey rows of `W^v` applied
/// to the (normalized) layer input.
fn betas(model: &Transformer, trace: &ForwardTrace, layer: usize, p: usize) -> Vec<f64> {
    let x = trace.layer(layer).attn_input.row(p);
    let wv = &model.weights.layers[layer].wv;
    (0..wv.rows())
        .map(|ch| wv.row(ch).iter().zip(x).map(|(a, b)| a * b).sum())
        .collect()
}

/// The `H × (query + 1) × d/H` attention neurons writing into query
/// position `query`; their vectors sum to `A`.
pub fn decompose_attention(
    model: &Transformer,
    trace: &ForwardTrace,
    layer: usize,
    query: usize,
) -> Result<Vec<NeuronRef>> {
    check_cell(trace, layer, query)?;
    let lt = trace.layer(layer);
    let wo = &model.weights.layers[layer].wo;
    let (d, h) = (model.config.model_dim, model.config.num_heads);
    let dh = d / h;
    let mut out = Vec::with_capacity(h * (query + 1) * dh);
    for p in 0..=query {
        let beta = betas(model, trace, layer, p);
        for (j, scores) in lt.attn_scores.iter().enumerate() {
            let alpha = scores.get2(query, p);
            for e in 0..dh {
                let ch = j * dh + e;
                let c = alpha * beta[ch];
                out.push(NeuronRef {
                    kind: NeuronKind::Attn,
                    layer,
                    position: p,
                    head: Some(j),
                    index: e,
                    coefficient: c,
                    vector: (0..d).map(|o| c * wo.get2(o, ch)).collect(),
                    importance: 0.0,
                });
            }
        }
    }
    Ok(out)
}

/// Default number of top neurons: 300, reduced to a tenth of the candidates
/// for small models.
pub fn default_top_k(total: usize) -> usize {
    300.min(total / 10).max(1)
}

pub(crate) fn rank(mut neurons: Vec<NeuronRef>, k: usize) -> Vec<NeuronRef> {
    if k > neurons.len() {
        log::warn!("requested top {k} of {} neurons; returning all", neurons.len());
    }
    neurons.sort_by(|a, b| {
        b.importance
            .partial_cmp(&a.importance)
            .unwrap_or(Ordering::Equal)
            .then_with(|| a.order_key().cmp(&b.order_key()))
    });
    neurons.truncate(k);
    neurons
}

/// Every attention neuron feeding the last position, scored against
/// `target` and ranked; `k` is clamped to the number of neurons.
pub fn top_attention_neurons(model: &Transformer, trace: &ForwardTrace, target: usize, k: usize) -> Result<Vec<NeuronRef>> {
    Ok(rank(score_attention_neurons(model, trace, target)?, k))
}

/// Every attention neuron feeding the last position, with importance.
pub fn score_attention_neurons(model: &Transformer, trace: &ForwardTrace, target: usize) -> Result<Vec<NeuronRef>> {
    if trace.is_empty() {
        return Err(Error::Contract("cannot score neurons of an empty prompt".into()));
    }
    let lens = LogitLens::new(model);
    let q = trace.len() - 1;
    let mut all = Vec::new();
    for l in 0..trace.num_layers() {
        let h_prev = trace.layer(l).input.row(q);
        for mut n in decompose_attention(model, trace, l, q)? {
            n.importance = importance_score(&lens, &n.vector, h_prev, target);
            all.push(n);
        }
    }
    Ok(all)
}

/// Every FFN neuron at the last position, with importance against `target`.
pub fn score_ffn_neurons(model: &Transformer, trace: &ForwardTrace, target: usize) -> Result<Vec<NeuronRef>> {
    if trace.is_empty() {
        return Err(Error::Contract("cannot score neurons of an empty prompt".into()));
    }
    let lens = LogitLens::new(model);
    let q = trace.len() - 1;
    let mut all = Vec::new();
    for l in 0..trace.num_layers() {
        let lt = trace.layer(l);
        let h_prev: Vec<f64> = lt.input.row(q).iter().zip(lt.attn_out.row(q)).map(|(a, b)| a + b).collect();
        for mut n in decompose_ffn(model, trace, l, q)? {
            n.importance = importance_score(&lens, &n.vector, &h_prev, target);
            all.push(n);
        }
    }
    Ok(all)
}

pub fn top_ffn_neurons(model: &Transformer, trace: &ForwardTrace, target: usize, k: usize) -> Result<Vec<NeuronRef>> {
    Ok(rank(score_ffn_neurons(model, trace, target)?, k))
}

/// Subkey of an attention neuron as seen from the residual stream at its
/// key position: the `W^v` row, scaled by the pre-attention normalization
/// (gain and the position's inverse RMS) when the model normalizes.
pub fn effective_subkey(model: &Transformer, trace: &ForwardTrace, neuron: &NeuronRef) -> Vec<f64> {
    let dh = model.config.head_dim();
    let ch = neuron.head.unwrap_or(0) * dh + neuron.index;
    let lw = &model.weights.layers[neuron.layer];
    let wv = lw.wv.row(ch);
    match (&lw.attn_norm, model.config.normalize) {
        (Some(g), true) => {
            let h = trace.layer(neuron.layer).input.row(neuron.position);
            let ms = h.iter().map(|x| x * x).sum::<f64>() / h.len() as f64;
            let inv = 1.0 / (ms + 1e-6).sqrt();
            wv.iter().zip(g.data()).map(|(w, g)| w * g * inv).collect()
        }
        _ => wv.to_vec(),
    }
}

/// Importance-weighted inner products between the selected attention
/// neurons' subkeys and every FFN neuron below them at the same position.
/// Returns one `T × N` matrix per layer.
pub fn shallow_ffn_attribution(model: &Transformer, trace: &ForwardTrace, top: &[NeuronRef]) -> Result<Vec<Tensor>> {
    let (l_count, t, n, d) = (
        trace.num_layers(),
        trace.len(),
        model.config.ffn_width,
        model.config.model_dim,
    );
    let mut out = vec![Tensor::zeros(&[t, n]); l_count];
    for neuron in top {
        if neuron.kind != NeuronKind::Attn {
            return Err(Error::Contract("shallow attribution expects attention neurons".into()));
        }
        check_cell(trace, neuron.layer, neuron.position)?;
        let u = effective_subkey(model, trace, neuron);
        let p = neuron.position;
        for (l, scores) in out.iter_mut().enumerate().take(neuron.layer) {
            let fc2 = &model.weights.layers[l].fc2;
            let coeffs = trace.layer(l).coefficients.row(p);
            let row = scores.row_mut(p);
            for k in 0..n {
                let dotp: f64 = (0..d).map(|o| u[o] * fc2.get2(o, k)).sum();
                row[k] += neuron.importance * coeffs[k] * dotp;
            }
        }
    }
    Ok(out)
}
