// SPDX-License-Identifier: MIT OR Apache-2.0

//! Small decoder-only transformers with back attention, trained on synthetic
//! arithmetic and knowledge-graph tasks, plus a neuron-level logit-flow
//! interpretability suite.

pub mod data;
pub mod error;
pub mod experiments;
pub mod interp;
pub mod io;
pub mod model;
pub mod numerics;
pub mod training;

pub use error::{Error, Result};
