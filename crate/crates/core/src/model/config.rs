// SPDX-License-Identifier: MIT OR Apache-2.0

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// FFN nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Silu,
    Relu,
}

/// Shape and behaviour of a decoder-only transformer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub num_layers: usize,
    pub model_dim: usize,
    pub num_heads: usize,
    pub ffn_width: usize,
    pub vocab_size: usize,
    pub max_positions: usize,
    #[serde(default)]
    pub activation: Activation,
    /// RMS pre-normalization in every sublayer plus a final normalization.
    #[serde(default = "yes")]
    pub normalize: bool,
    #[serde(default)]
    pub seed: u64,
}

fn yes() -> bool {
    true
}

impl ModelConfig {
    /// Config with the conventional `ffn_width = 4 * model_dim`.
    pub fn new(num_layers: usize, model_dim: usize, num_heads: usize, vocab_size: usize, max_positions: usize) -> Self {
        Self {
            num_layers,
            model_dim,
            num_heads,
            ffn_width: 4 * model_dim,
            vocab_size,
            max_positions,
            activation: Activation::Silu,
            normalize: true,
            seed: 0,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.num_heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.model_dim == 0 || self.num_heads == 0 || self.model_dim % self.num_heads != 0 {
            return Err(Error::Config(format!(
                "model_dim {} must be a positive multiple of num_heads {}",
                self.model_dim, self.num_heads
            )));
        }
        if self.ffn_width == 0 {
            return Err(Error::Config("ffn_width must be at least 1".into()));
        }
        if self.vocab_size == 0 || self.max_positions == 0 {
            return Err(Error::Config("vocab_size and max_positions must be positive".into()));
        }
        Ok(())
    }
}

/// How back attention is wired into the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackAttentionMode {
    /// Trained jointly with the model: queries from the layer-0 input,
    /// keys/values from the layer-0 output.
    Scratch,
    /// Added to a frozen model: queries from the input of `source_layer`,
    /// keys/values from the outputs of layers `source_layer..L`.
    Finetune,
}

/// Back-attention hyperparameters (weights live in the model's weights).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackAttentionConfig {
    pub back_dim: usize,
    #[serde(default)]
    pub source_layer: usize,
    pub mode: BackAttentionMode,
}

impl BackAttentionConfig {
    pub fn scratch(back_dim: usize) -> Self {
        Self {
            back_dim,
            source_layer: 0,
            mode: BackAttentionMode::Scratch,
        }
    }

    pub fn finetune(back_dim: usize, source_layer: usize) -> Self {
        Self {
            back_dim,
            source_layer,
            mode: BackAttentionMode::Finetune,
        }
    }

    pub fn validate(&self, num_layers: usize) -> Result<()> {
        if self.back_dim == 0 {
            return Err(Error::Config("back_dim must be at least 1".into()));
        }
        match self.mode {
            BackAttentionMode::Scratch if self.source_layer != 0 => Err(Error::Config(
                "scratch back attention always uses layer 0 as source".into(),
            )),
            _ if self.source_layer >= num_layers => Err(Error::Config(format!(
                "back-attention source layer {} must be below num_layers {}",
                self.source_layer, num_layers
            ))),
            _ => Ok(()),
        }
    }

    /// Layers whose outputs supply keys and values.
    pub fn target_layers(&self, num_layers: usize) -> Range<usize> {
        match self.mode {
            BackAttentionMode::Scratch => 0..1,
            BackAttentionMode::Finetune => self.source_layer..num_layers,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation() {
        assert!(ModelConfig::new(1, 8, 2, 10, 4).validate().is_ok());
        assert!(ModelConfig::new(1, 9, 2, 10, 4).validate().is_err());
        let mut c = ModelConfig::new(1, 8, 2, 10, 4);
        c.ffn_width = 0;
        assert!(c.validate().is_err());
        assert!(BackAttentionConfig::finetune(4, 2).validate(2).is_err());
        assert!(BackAttentionConfig::finetune(4, 1).validate(2).is_ok());
        assert_eq!(BackAttentionConfig::finetune(4, 1).target_layers(4), 1..4);
        assert_eq!(BackAttentionConfig::scratch(4).target_layers(3), 0..1);
    }

    #[test]
    fn unknown_keys_rejected() {
        let bad = r#"{"num_layers":1,"model_dim":8,"num_heads":2,"ffn_width":32,"vocab_size":4,"max_positions":4,"bogus":1}"#;
        assert!(serde_json::from_str::<ModelConfig>(bad).is_err());
    }
}
