// SPDX-License-Identifier: MIT OR Apache-2.0

use std::ops::Range;

use super::config::BackAttentionMode;
use crate::numerics::{log_softmax, Tensor};

/// Recorded activations of one layer application (all `T × ·`).
#[derive(Debug, Clone, PartialEq)]
pub struct LayerTrace {
    /// Residual stream entering the layer.
    pub input: Tensor,
    /// Normalized input fed to the attention projections.
    pub attn_input: Tensor,
    /// Attention sublayer output.
    pub attn_out: Tensor,
    /// Per-head `T × T` attention probabilities (query row, key column).
    pub attn_scores: Vec<Tensor>,
    /// Normalized `input + attn_out` fed to the FFN.
    pub ffn_input: Tensor,
    /// FFN neuron coefficients (post-activation), `T × N`.
    pub coefficients: Tensor,
    pub ffn_out: Tensor,
    /// Residual stream leaving the layer.
    pub output: Tensor,
}

/// Back-attention activations.
#[derive(Debug, Clone, PartialEq)]
pub struct BackAttentionTrace {
    pub source_layer: usize,
    pub target_layers: Range<usize>,
    pub mode: BackAttentionMode,
    /// Residual input of the source layer (queries are built from it).
    pub source_states: Tensor,
    /// `T × (n_targets · T)` probabilities; column `b·T + p` is position
    /// `p` of target layer `target_layers.start + b`.
    pub scores: Tensor,
    /// Vectors added to `source_states`.
    pub output: Tensor,
}

/// Everything one forward pass computed, in `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub tokens: Vec<usize>,
    /// Token plus position embeddings.
    pub embeddings: Tensor,
    pub pass1: Vec<LayerTrace>,
    pub back_attention: Option<BackAttentionTrace>,
    /// Recomputed layers `source_layer..L` (empty without back attention).
    pub pass2: Vec<LayerTrace>,
    pub logits: Tensor,
    pub log_probs: Tensor,
}

impl ForwardTrace {
    pub(crate) fn new(
        tokens: Vec<usize>,
        embeddings: Tensor,
        pass1: Vec<LayerTrace>,
        back_attention: Option<BackAttentionTrace>,
        pass2: Vec<LayerTrace>,
        logits: Tensor,
    ) -> Self {
        let mut log_probs = logits.clone();
        for r in 0..log_probs.rows() {
            let lp = log_softmax(logits.row(r));
            log_probs.row_mut(r).copy_from_slice(&lp);
        }
        Self {
            tokens,
            embeddings,
            pass1,
            back_attention,
            pass2,
            logits,
            log_probs,
        }
    }

    pub fn num_layers(&self) -> usize {
        self.pass1.len()
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Layer `l` as it contributed to the final prediction (pass 2 when
    /// back attention recomputed it).
    pub fn layer(&self, l: usize) -> &LayerTrace {
        match &self.back_attention {
            Some(b) if l >= b.source_layer => &self.pass2[l - b.source_layer],
            _ => &self.pass1[l],
        }
    }

    /// Residual stream after layer `l` of the final pass.
    pub fn hidden(&self, l: usize) -> &[f64] {
        self.layer(l).output.row(self.len() - 1)
    }

    /// Log-probability of `token` at the last position.
    pub fn last_log_prob(&self, token: usize) -> f64 {
        self.log_probs.row(self.len() - 1)[token]
    }
}
