// SPDX-License-Identifier: MIT OR Apache-2.0

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BackAttentionMode, ForwardTrace};
use crate::numerics::{argmax, Tensor};

/// Back-attention probabilities of one prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackAttentionScores {
    pub mode: BackAttentionMode,
    pub source_layer: usize,
    /// Layers whose outputs serve as keys.
    pub target_layers: Range<usize>,
    pub positions: usize,
    /// `T × (n_targets · T)`; column `b·T + p` is key position `p` of
    /// target layer `target_layers.start + b`. Rows sum to one.
    pub scores: Tensor,
}

impl BackAttentionScores {
    /// `(layer, key position)` holding the most mass for query `q`.
    pub fn peak(&self, q: usize) -> (usize, usize) {
        let c = argmax(self.scores.row(q));
        (self.target_layers.start + c / self.positions, c % self.positions)
    }

    /// The query row reshaped to `target layers × positions`.
    pub fn grid(&self, q: usize) -> Tensor {
        let n = self.target_layers.len();
        let mut g = Tensor::zeros(&[n, self.positions]);
        g.data_mut().copy_from_slice(self.scores.row(q));
        g
    }
}

pub fn extract_back_attention_scores(trace: &ForwardTrace) -> Result<BackAttentionScores> {
    let ba = trace
        .back_attention
        .as_ref()
        .ok_or(Error::Absent("back attention in this model"))?;
    Ok(BackAttentionScores {
        mode: ba.mode,
        source_layer: ba.source_layer,
        target_layers: ba.target_layers.clone(),
        positions: trace.len(),
        scores: ba.scores.clone(),
    })
}
