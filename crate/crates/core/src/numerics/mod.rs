// SPDX-License-Identifier: MIT OR Apache-2.0

//! Numeric substrate: tensors, recorded differentiation, AdamW.

mod adamw;
mod scalar;
mod tape;
mod tensor;

pub use adamw::{AdamWConfig, AdamWState};
pub use scalar::Scalar;
pub use tape::{AttentionMask, Gradients, Tape, Var};
pub use tensor::{argmax, cross_entropy, dot, log_softmax, sigmoid, silu, Tensor};


use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Seeded generator used for every random draw in the crate.
pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Tensor of i.i.d. `N(0, std²)` samples.
pub fn randn<S: Scalar>(shape: &[usize], std: f64, rng: &mut ChaCha8Rng) -> Tensor<S> {
    let normal = Normal::new(0.0, std).expect("finite std");
    let n = shape.iter().product();
    let data = (0..n).map(|_| S::lit(normal.sample(rng))).collect();
    Tensor::new(shape.to_vec(), data).expect("shape product")
}
