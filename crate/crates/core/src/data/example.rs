// SPDX-License-Identifier: MIT OR Apache-2.0

use std::collections::BTreeMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExampleKind {
    SingleSum,
    DoubleSum,
    FirstHop,
    SecondHop,
    TwoHop,
}

impl ExampleKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::SingleSum => "single_sum",
            Self::DoubleSum => "double_sum",
            Self::FirstHop => "first_hop",
            Self::SecondHop => "second_hop",
            Self::TwoHop => "two_hop",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpanRole {
    Entity,
    Relation,
    Possessive,
    Last,
    Operand,
    Operator,
}

/// A labelled half-open token range of a prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub label: String,
    pub role: SpanRole,
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(label: impl Into<String>, role: SpanRole, range: Range<usize>) -> Self {
        Self {
            label: label.into(),
            role,
            start: range.start,
            end: range.end,
        }
    }

    pub fn range(&self) -> Range<usize> {
        self.start..self.end
    }
}

/// Checks that `spans` cover `0..len` contiguously without gaps or overlap.
pub fn check_tiling(spans: &[Span], len: usize) -> Result<()> {
    let mut at = 0;
    for s in spans {
        if s.start != at || s.end <= s.start {
            return Err(Error::Span(format!(
                "span `{}` covers {}..{} but the next uncovered position is {at}",
                s.label, s.start, s.end
            )));
        }
        at = s.end;
    }
    if at != len {
        return Err(Error::Span(format!("spans cover {at} of {len} positions")));
    }
    Ok(())
}

/// One prompt with its expected continuation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Example {
    pub kind: ExampleKind,
    pub prompt_ids: Vec<usize>,
    /// Answer tokens including the end marker.
    pub answer_ids: Vec<usize>,
    pub spans: Vec<Span>,
    #[serde(default)]
    pub metadata: BTreeMap<String, serde_json::Value>,
}

impl Example {
    /// Prompt followed by answer.
    pub fn sequence(&self) -> Vec<usize> {
        let mut s = self.prompt_ids.clone();
        s.extend_from_slice(&self.answer_ids);
        s
    }

    pub fn meta_usize(&self, key: &str) -> Option<usize> {
        self.metadata.get(key)?.as_u64().map(|v| v as usize)
    }
}
