// SPDX-License-Identifier: MIT OR Apache-2.0

//! AdamW with decoupled weight decay.

use serde::{Deserialize, Serialize};

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Optimizer hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// Moment estimates for a fixed list of parameters.
#[derive(Debug, Clone)]
pub struct AdamWState<S: Scalar = f64> {
    pub config: AdamWConfig,
    step: u64,
    first: Vec<Tensor<S>>,
    second: Vec<Tensor<S>>,
}

impl<S: Scalar> AdamWState<S> {
    /// Zeroed moments shaped like `shapes`.
    pub fn new(config: AdamWConfig, shapes: &[&[usize]]) -> Self {
        Self {
            config,
            step: 0,
            first: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
            second: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update of every parameter `i` for which `grads[i]` is present.
    /// Parameters with `None` are left untouched (frozen).
    pub fn step(&mut self, params: &mut [&mut Tensor<S>], grads: &[Option<&Tensor<S>>]) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != params.len() {
            return Err(Error::Dimension {
                op: "adamw_step",
                lhs: vec![self.first.len()],
                rhs: vec![params.len(), grads.len()],
            });
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if let Some(g) = g {
                if p.shape() != g.shape() || p.shape() != self.first[i].shape() {
                    return Err(Error::Dimension {
                        op: "adamw_step",
                        lhs: p.shape().to_vec(),
                        rhs: g.shape().to_vec(),
                    });
                }
            }
        }
        self.step += 1;
        let c = self.config;
        let (b1, b2) = (S::lit(c.beta1), S::lit(c.beta2));
        let lr = S::lit(c.lr);
        let decay = S::one() - lr * S::lit(c.weight_decay);
        let bc1 = S::one() - S::lit(c.beta1.powi(self.step as i32));
        let bc2 = S::one() - S::lit(c.beta2.powi(self.step as i32));
        let eps = S::lit(c.eps);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let Some(g) = g else { continue };
            let m = self.first[i].data_mut();
            let v = self.second[i].data_mut();
            for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                *mi = b1 * *mi + (S::one() - b1) * gi;
                *vi = b2 * *vi + (S::one() - b2) * gi * gi;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *w = *w * decay - lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(config: AdamWConfig, init: &[f64], grads: &[Vec<f64>]) -> Vec<f64> {
        let mut p = Tensor::vector(init.to_vec());
        let mut st = AdamWState::<f64>::new(config, &[&[init.len()]]);
        for g in grads {
            let g = Tensor::vector(g.clone());
            st.step(&mut [&mut p], &[Some(&g)]).unwrap();
        }
        assert_eq!(st.step_count(), grads.len() as u64);
        p.into_data()
    }

    #[test]
    fn zero_gradient_no_decay_is_identity() {
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        let out = run(cfg, &[1.5, -2.0], &vec![vec![0.0, 0.0]; 4]);
        assert_eq!(out, vec![1.5, -2.0]);
    }

    #[test]
    fn zero_gradient_decays_multiplicatively() {
        let cfg = AdamWConfig {
            lr: 0.1,
            weight_decay: 0.5,
            ..Default::default()
        };
        let out = run(cfg, &[2.0, -4.0], &[vec![0.0, 0.0]]);
        let f = 1.0 - 0.1 * 0.5;
        assert!((out[0] - 2.0 * f).abs() < 1e-15);
        assert!((out[1] + 4.0 * f).abs() < 1e-15);
    }

    #[test]
    fn scalar_sequence_matches_hand_stepped_reference() {
        let cfg = AdamWConfig {
            lr: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.1,
        };
        let gs = [0.5, -1.25, 2.0];
        // Hand-stepped reference, written out without the implementation's loop.
        let (mut w, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        for (t, g) in gs.iter().enumerate() {
            let t = (t + 1) as i32;
            w -= 0.01 * 0.1 * w;
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            w -= 0.01 * mh / (vh.sqrt() + 1e-8);
        }
        let out = run(cfg, &[1.0], &gs.iter().map(|&g| vec![g]).collect::<Vec<_>>());
        assert!((out[0] - w).abs() < 1e-10, "{} vs {}", out[0], w);
    }

    #[test]
    fn shape_mismatch_is_dimension_error() {
        let mut p = Tensor::<f64>::zeros(&[2]);
        let g = Tensor::zeros(&[3]);
        let mut st = AdamWState::<f64>::new(AdamWConfig::default(), &[&[2]]);
        assert!(matches!(st.step(&mut [&mut p], &[Some(&g)]), Err(Error::Dimension { .. })));
        assert_eq!(st.step_count(), 0);
    }

    #[test]
    fn frozen_entries_untouched() {
        let mut a = Tensor::vector(vec![1.0]);
        let mut b = Tensor::vector(vec![1.0]);
        let g = Tensor::vector(vec![1.0]);
        let mut st = AdamWState::<f64>::new(AdamWConfig::default(), &[&[1], &[1]]);
        st.step(&mut [&mut a, &mut b], &[Some(&g), None]).unwrap();
        assert_ne!(a.data()[0], 1.0);
        assert_eq!(b.data()[0], 1.0);
    }
}
