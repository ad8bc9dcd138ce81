// SPDX-License-Identifier: MIT OR Apache-2.0

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::example::{Example, ExampleKind, Span, SpanRole};
use super::vocab::{Vocab, EOS, EQUALS, PLUS};
use crate::error::{Error, Result};
use crate::numerics::rng;

/// Sizes of the addition task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArithmeticConfig {
    /// Two-operand sums per set, sampled with replacement, shared by both sets.
    pub n_single: usize,
    /// Three-operand sums per set; train and test are disjoint.
    pub n_double: usize,
    pub max_operand: u32,
}

impl Default for ArithmeticConfig {
    fn default() -> Self {
        Self {
            n_single: 12_150,
            n_double: 6_188,
            max_operand: 99,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArithmeticSplit {
    pub train: Vec<Example>,
    pub test: Vec<Example>,
}

fn digits(n: u32) -> Vec<usize> {
    n.to_string()
        .bytes()
        .map(|b| Vocab::digit((b - b'0') as u32))
        .collect()
}

/// `"a+b="` or `"c+d+e="` with answer digits and the end marker.
pub fn arithmetic_example(operands: &[u32]) -> Example {
    let mut prompt = Vec::new();
    let mut spans = Vec::new();
    for (k, &x) in operands.iter().enumerate() {
        if k > 0 {
            spans.push(Span::new(format!("plus{k}"), SpanRole::Operator, prompt.len()..prompt.len() + 1));
            prompt.push(PLUS);
        }
        let d = digits(x);
        spans.push(Span::new(
            format!("operand{}", k + 1),
            SpanRole::Operand,
            prompt.len()..prompt.len() + d.len(),
        ));
        prompt.extend(d);
    }
    spans.push(Span::new("last", SpanRole::Last, prompt.len()..prompt.len() + 1));
    prompt.push(EQUALS);
    let sum: u32 = operands.iter().sum();
    let mut answer = digits(sum);
    answer.push(EOS);
    let kind = if operands.len() == 2 {
        ExampleKind::SingleSum
    } else {
        ExampleKind::DoubleSum
    };
    let mut metadata = std::collections::BTreeMap::new();
    metadata.insert("operands".into(), serde_json::json!(operands));
    metadata.insert("sum".into(), serde_json::json!(sum));
    Example {
        kind,
        prompt_ids: prompt,
        answer_ids: answer,
        spans,
        metadata,
    }
}

/// The addition task at its full size.
pub fn gen_arithmetic(seed: u64) -> ArithmeticSplit {
    gen_arithmetic_with(seed, &ArithmeticConfig::default()).expect("default sizes are feasible")
}

pub fn gen_arithmetic_with(seed: u64, config: &ArithmeticConfig) -> Result<ArithmeticSplit> {
    let range = config.max_operand as usize + 1;
    let space = range.pow(3);
    if 2 * config.n_double > space {
        return Err(Error::Config(format!(
            "{} distinct three-operand sums requested from {space} possible",
            2 * config.n_double
        )));
    }
    let mut r = rng(seed);
    let singles: Vec<Example> = (0..config.n_single)
        .map(|_| {
            let a = r.random_range(0..=config.max_operand);
            let b = r.random_range(0..=config.max_operand);
            arithmetic_example(&[a, b])
        })
        .collect();
    let mut r = rng(seed.wrapping_add(0x5EED_D0B1));
    let triples = sample(&mut r, space, 2 * config.n_double);
    let triple = |code: usize| {
        let c = (code / (range * range)) as u32;
        let d = ((code / range) % range) as u32;
        let e = (code % range) as u32;
        arithmetic_example(&[c, d, e])
    };
    let codes: Vec<usize> = triples.into_iter().collect();
    let (a, b) = codes.split_at(config.n_double);
    let mut train = singles.clone();
    train.extend(a.iter().map(|&c| triple(c)));
    let mut test = singles;
    test.extend(b.iter().map(|&c| triple(c)));
    Ok(ArithmeticSplit { train, test })
}
