// SPDX-License-Identifier: MIT OR Apache-2.0

//! Decoder-only transformer with optional back attention.
//!
//! Row-vector convention: states are `T × d` matrices. Each layer computes
//! `A = Attn(norm(h))`, `F = FFN(norm(h + A))`, `h' = h + A + F`; the final
//! state is normalized and multiplied by the unembedding. Back attention
//! builds a single-head attention with queries from a source layer's input
//! and keys/values from higher layer outputs, adds its output to that input,
//! and recomputes the layers from the source upwards.

mod checkpoint;
mod config;
mod forward;
mod params;
mod trace;
mod weights;

pub use checkpoint::{weights_digest, Checkpoint};
pub use config::{Activation, BackAttentionConfig, BackAttentionMode, ModelConfig};
pub use forward::{Batch, Intervention, Transformer};
pub use params::{count_params, ParamCount};
pub use trace::{BackAttentionTrace, ForwardTrace, LayerTrace};
pub use weights::{BackAttentionWeights, LayerWeights, TransformerWeights};

pub(crate) use checkpoint::hex;
