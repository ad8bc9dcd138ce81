// SPDX-License-Identifier: MIT OR Apache-2.0

use serde::{Deserialize, Serialize};

use super::config::{BackAttentionConfig, ModelConfig};

/// Trainable-parameter count split by component.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct ParamCount {
    pub embedding: usize,
    pub unembedding: usize,
    pub positions: usize,
    pub attention: usize,
    pub ffn: usize,
    pub norms: usize,
    pub back_attention: usize,
}

impl ParamCount {
    pub fn total(&self) -> usize {
        self.embedding
            + self.unembedding
            + self.positions
            + self.attention
            + self.ffn
            + self.norms
            + self.back_attention
    }
}

/// Exact count of what [`super::TransformerWeights::init`] allocates.
pub fn count_params(config: &ModelConfig, back_attention: Option<&BackAttentionConfig>) -> ParamCount {
    let (l, d, n, b) = (
        config.num_layers,
        config.model_dim,
        config.ffn_width,
        config.vocab_size,
    );
    let norm_vectors = if config.normalize { 2 * l + 1 } else { 0 };
    ParamCount {
        embedding: b * d,
        unembedding: b * d,
        positions: config.max_positions * d,
        attention: l * 4 * d * d,
        ffn: l * 2 * n * d,
        norms: norm_vectors * d,
        back_attention: back_attention.map_or(0, |ba| 4 * d * ba.back_dim),
    }
}
