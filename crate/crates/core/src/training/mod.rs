// SPDX-License-Identifier: MIT OR Apache-2.0

//! Deterministic AdamW training, exact-match evaluation and frozen-base
//! back-attention fine-tuning.

mod eval;
mod train;

pub use eval::{evaluate_exact_match, exact_match_verdicts, greedy_exact_match, Accuracy};
pub use train::{
    finetune_back_attention, loss_and_gradients, mean_loss, train, EarlyStop, EpochRecord, LossMode, TrainConfig, TrainReport,
    BACK_ATTENTION_PREFIX,
};
