// SPDX-License-Identifier: MIT OR Apache-2.0

//! Synthetic tasks: multi-digit addition and a functional knowledge graph
//! queried one or two hops at a time.

mod arithmetic;
mod dataset;
mod example;
mod kg;
mod vocab;

pub use arithmetic::{arithmetic_example, gen_arithmetic, gen_arithmetic_with, ArithmeticConfig, ArithmeticSplit};
pub use dataset::{Dataset, DatasetHeader};
pub use example::{check_tiling, Example, ExampleKind, Span, SpanRole};
pub use kg::{
    composable_pairs, fact_examples, filter_shortcuts, gen_knowledge_graph, hop_prompt, make_hop_queries, HopKind,
    HopQuery, KgConfig, KnowledgeGraph, MAX_GOLD_REPEATS,
};
pub use vocab::{Vocab, VocabSpec, BOS, EOS, EQUALS, IS, PAD, PLUS, POSSESSIVE};
