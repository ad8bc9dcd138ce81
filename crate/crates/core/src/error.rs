// SPDX-License-Identifier: MIT OR Apache-2.0

//! Error type shared by every module of the crate.

use std::path::PathBuf;

/// Errors produced by `logitflow`.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Operand shapes are incompatible for the named operation.
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// An index (token id, class, layer, position) is out of range.
    #[error("{what} index {index} out of range (limit {limit})")]
    Index {
        what: &'static str,
        index: usize,
        limit: usize,
    },

    /// Unknown token, atom, or vocabulary mismatch.
    #[error("vocabulary error: {0}")]
    Vocab(String),

    /// Invalid model, back-attention, training, or experiment configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// A caller broke an operation's precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Span annotations do not tile the prompt.
    #[error("span error: {0}")]
    Span(String),

    /// Clean and corrupt prompts cannot be patched against each other.
    #[error("patch error: {0}")]
    Patch(String),

    /// The trace or model lacks a component the analysis requires.
    #[error("{0} is not present")]
    Absent(&'static str),

    /// A non-finite loss appeared during training.
    #[error("non-finite loss {loss} at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize, loss: f64 },

    /// A frozen parameter changed during fine-tuning.
    #[error("frozen parameter `{0}` was modified")]
    FrozenViolation(String),

    /// Malformed checkpoint, dataset, or table file.
    #[error("format error in {path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Self::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }
}
