// SPDX-License-Identifier: MIT OR Apache-2.0

use crate::model::Transformer;
use crate::numerics::{log_softmax, Tensor};

const RMS_EPS: f64 = 1e-6;

/// Reads a `d`-vector as a next-token distribution through the model's final
/// normalization (when it has one) and unembedding.
#[derive(Debug, Clone, Copy)]
pub struct LogitLens<'m> {
    gain: Option<&'m Tensor>,
    normalize: bool,
    unembed: &'m Tensor,
}

impl<'m> LogitLens<'m> {
    pub fn new(model: &'m Transformer) -> Self {
        Self {
            gain: model.weights.final_norm.as_ref(),
            normalize: model.config.normalize,
            unembed: &model.weights.unembed,
        }
    }

    /// Skips the final normalization even if the model has one.
    pub fn raw(model: &'m Transformer) -> Self {
        Self {
            gain: None,
            normalize: false,
            unembed: &model.weights.unembed,
        }
    }

    pub fn logits(&self, v: &[f64]) -> Vec<f64> {
        let d = v.len();
        let z: Vec<f64> = if self.normalize {
            let ms = v.iter().map(|x| x * x).sum::<f64>() / d as f64;
            let inv = 1.0 / (ms + RMS_EPS).sqrt();
            match self.gain {
                Some(g) => v.iter().zip(g.data()).map(|(x, g)| x * inv * g).collect(),
                None => v.iter().map(|x| x * inv).collect(),
            }
        } else {
            v.to_vec()
        };
        (0..self.unembed.rows())
            .map(|b| self.unembed.row(b).iter().zip(&z).map(|(u, x)| u * x).sum())
            .collect()
    }

    pub fn log_probs(&self, v: &[f64]) -> Vec<f64> {
        log_softmax(&self.logits(v))
    }

    pub fn log_prob(&self, v: &[f64], token: usize) -> f64 {
        self.log_probs(v)[token]
    }
}

/// Log-probabilities of `v` under the model's logit lens.
pub fn logit_lens(model: &Transformer, v: &[f64]) -> Vec<f64> {
    LogitLens::new(model).log_probs(v)
}

/// Increase in `log p(target)` when `v` is added to its residual input.
pub fn importance_score(lens: &LogitLens<'_>, v: &[f64], h_prev: &[f64], target: usize) -> f64 {
    let with: Vec<f64> = v.iter().zip(h_prev).map(|(a, b)| a + b).collect();
    lens.log_prob(&with, target) - lens.log_prob(h_prev, target)
}
