// SPDX-License-Identifier: MIT OR Apache-2.0

use super::config::{BackAttentionConfig, BackAttentionMode, ModelConfig};
use crate::error::{Error, Result};
use crate::numerics::{randn, rng, Scalar, Tensor};

/// Weights of one transformer layer.
///
/// `wq`, `wk`, `wv`, `wo` are `d × d` with head `j` occupying rows (for
/// `wq`/`wk`/`wv`) or columns (for `wo`) `j·d/H..(j+1)·d/H`: row `j·d/H + e`
/// of `wv` is the attention subkey of channel `e`, column `j·d/H + e` of
/// `wo` its subvalue. `fc1` is `N × d` (rows are FFN subkeys) and `fc2` is
/// `d × N` (columns are FFN subvalues).
#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights<S: Scalar = f64> {
    pub attn_norm: Option<Tensor<S>>,
    pub wq: Tensor<S>,
    pub wk: Tensor<S>,
    pub wv: Tensor<S>,
    pub wo: Tensor<S>,
    pub ffn_norm: Option<Tensor<S>>,
    pub fc1: Tensor<S>,
    pub fc2: Tensor<S>,
}

/// Single-head back attention: `wq`, `wk`, `wv` are `d × d′`, `wo` is `d′ × d`.
#[derive(Debug, Clone, PartialEq)]
pub struct BackAttentionWeights<S: Scalar = f64> {
    pub wq: Tensor<S>,
    pub wk: Tensor<S>,
    pub wv: Tensor<S>,
    pub wo: Tensor<S>,
}

/// Every trainable tensor of the model.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformerWeights<S: Scalar = f64> {
    /// `B × d` token embedding.
    pub embed: Tensor<S>,
    /// `B × d` unembedding.
    pub unembed: Tensor<S>,
    /// `T_max × d` learned absolute positions.
    pub pos_embed: Tensor<S>,
    pub layers: Vec<LayerWeights<S>>,
    pub final_norm: Option<Tensor<S>>,
    pub back_attention: Option<BackAttentionWeights<S>>,
}

const INIT_STD: f64 = 0.02;

impl<S: Scalar> BackAttentionWeights<S> {
    /// Fresh weights; fine-tuning starts from a zero output projection so
    /// the injection is an exact no-op.
    pub fn init(model_dim: usize, ba: &BackAttentionConfig, seed: u64) -> Self {
        let mut r = rng(seed ^ 0xBAC4_A77E);
        let d = model_dim;
        let dp = ba.back_dim;
        let wq = randn(&[d, dp], INIT_STD, &mut r);
        let wk = randn(&[d, dp], INIT_STD, &mut r);
        let wv = randn(&[d, dp], INIT_STD, &mut r);
        let wo = match ba.mode {
            BackAttentionMode::Finetune => Tensor::zeros(&[dp, d]),
            BackAttentionMode::Scratch => randn(&[dp, d], INIT_STD / 2f64.sqrt(), &mut r),
        };
        Self { wq, wk, wv, wo }
    }
}

impl<S: Scalar> TransformerWeights<S> {
    /// Seeded initialization.
    pub fn init(config: &ModelConfig, back_attention: Option<&BackAttentionConfig>) -> Result<Self> {
        config.validate()?;
        let mut r = rng(config.seed);
        let (d, n, b) = (config.model_dim, config.ffn_width, config.vocab_size);
        let resid_std = INIT_STD / (2.0 * config.num_layers.max(1) as f64).sqrt();
        let norm = |on: bool| on.then(|| Tensor::full(&[d], S::one()));
        let embed = randn(&[b, d], INIT_STD, &mut r);
        let unembed = randn(&[b, d], INIT_STD, &mut r);
        let pos_embed = randn(&[config.max_positions, d], INIT_STD, &mut r);
        let layers = (0..config.num_layers)
            .map(|_| LayerWeights {
                attn_norm: norm(config.normalize),
                wq: randn(&[d, d], INIT_STD, &mut r),
                wk: randn(&[d, d], INIT_STD, &mut r),
                wv: randn(&[d, d], INIT_STD, &mut r),
                wo: randn(&[d, d], resid_std, &mut r),
                ffn_norm: norm(config.normalize),
                fc1: randn(&[n, d], INIT_STD, &mut r),
                fc2: randn(&[d, n], resid_std, &mut r),
            })
            .collect();
        let back_attention = match back_attention {
            Some(ba) => {
                ba.validate(config.num_layers)?;
                Some(BackAttentionWeights::init(d, ba, config.seed))
            }
            None => None,
        };
        Ok(Self {
            embed,
            unembed,
            pos_embed,
            layers,
            final_norm: norm(config.normalize),
            back_attention,
        })
    }

    /// Canonical (name, tensor) list; the index in this list is the
    /// parameter id used by the differentiation record.
    pub fn named(&self) -> Vec<(String, &Tensor<S>)> {
        let mut out = vec![
            ("embed".to_string(), &self.embed),
            ("unembed".to_string(), &self.unembed),
            ("pos_embed".to_string(), &self.pos_embed),
        ];
        for (l, w) in self.layers.iter().enumerate() {
            if let Some(g) = &w.attn_norm {
                out.push((format!("layers.{l}.attn_norm"), g));
            }
            out.push((format!("layers.{l}.wq"), &w.wq));
            out.push((format!("layers.{l}.wk"), &w.wk));
            out.push((format!("layers.{l}.wv"), &w.wv));
            out.push((format!("layers.{l}.wo"), &w.wo));
            if let Some(g) = &w.ffn_norm {
                out.push((format!("layers.{l}.ffn_norm"), g));
            }
            out.push((format!("layers.{l}.fc1"), &w.fc1));
            out.push((format!("layers.{l}.fc2"), &w.fc2));
        }
        if let Some(g) = &self.final_norm {
            out.push(("final_norm".to_string(), g));
        }
        if let Some(ba) = &self.back_attention {
            out.push(("back_attention.wq".to_string(), &ba.wq));
            out.push(("back_attention.wk".to_string(), &ba.wk));
            out.push(("back_attention.wv".to_string(), &ba.wv));
            out.push(("back_attention.wo".to_string(), &ba.wo));
        }
        out
    }

    /// Mutable view in the same order as [`Self::named`].
    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor<S>)> {
        let mut out = vec![
            ("embed".to_string(), &mut self.embed),
            ("unembed".to_string(), &mut self.unembed),
            ("pos_embed".to_string(), &mut self.pos_embed),
        ];
        for (l, w) in self.layers.iter_mut().enumerate() {
            if let Some(g) = &mut w.attn_norm {
                out.push((format!("layers.{l}.attn_norm"), g));
            }
            out.push((format!("layers.{l}.wq"), &mut w.wq));
            out.push((format!("layers.{l}.wk"), &mut w.wk));
            out.push((format!("layers.{l}.wv"), &mut w.wv));
            out.push((format!("layers.{l}.wo"), &mut w.wo));
            if let Some(g) = &mut w.ffn_norm {
                out.push((format!("layers.{l}.ffn_norm"), g));
            }
            out.push((format!("layers.{l}.fc1"), &mut w.fc1));
            out.push((format!("layers.{l}.fc2"), &mut w.fc2));
        }
        if let Some(g) = &mut self.final_norm {
            out.push(("final_norm".to_string(), g));
        }
        if let Some(ba) = &mut self.back_attention {
            out.push(("back_attention.wq".to_string(), &mut ba.wq));
            out.push(("back_attention.wk".to_string(), &mut ba.wk));
            out.push(("back_attention.wv".to_string(), &mut ba.wv));
            out.push(("back_attention.wo".to_string(), &mut ba.wo));
        }
        out
    }

    /// Replaces tensors by name; every name must exist with a matching shape.
    pub fn assign(&mut self, tensors: Vec<(String, Tensor<S>)>) -> Result<()> {
        let mut slots = self.named_mut();
        if slots.len() != tensors.len() {
            return Err(Error::Config(format!(
                "expected {} tensors, got {}",
                slots.len(),
                tensors.len()
            )));
        }
        for (name, t) in tensors {
            let slot = slots
                .iter_mut()
                .find(|(n, _)| *n == name)
                .ok_or_else(|| Error::Config(format!("unexpected tensor `{name}`")))?;
            if slot.1.shape() != t.shape() {
                return Err(Error::Dimension {
                    op: "assign",
                    lhs: slot.1.shape().to_vec(),
                    rhs: t.shape().to_vec(),
                });
            }
            *slot.1 = t;
        }
        Ok(())
    }

    pub fn cast<T: Scalar>(&self) -> TransformerWeights<T> {
        let c = |t: &Tensor<S>| t.cast::<T>();
        let co = |t: &Option<Tensor<S>>| t.as_ref().map(|t| t.cast::<T>());
        TransformerWeights {
            embed: c(&self.embed),
            unembed: c(&self.unembed),
            pos_embed: c(&self.pos_embed),
            layers: self
                .layers
                .iter()
                .map(|w| LayerWeights {
                    attn_norm: co(&w.attn_norm),
                    wq: c(&w.wq),
                    wk: c(&w.wk),
                    wv: c(&w.wv),
                    wo: c(&w.wo),
                    ffn_norm: co(&w.ffn_norm),
                    fc1: c(&w.fc1),
                    fc2: c(&w.fc2),
                })
                .collect(),
            final_norm: co(&self.final_norm),
            back_attention: self.back_attention.as_ref().map(|b| BackAttentionWeights {
                wq: c(&b.wq),
                wk: c(&b.wk),
                wv: c(&b.wv),
                wo: c(&b.wo),
            }),
        }
    }

    pub fn num_params(&self) -> usize {
        self.named().iter().map(|(_, t)| t.len()).sum()
    }
}
