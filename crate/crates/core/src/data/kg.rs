// SPDX-License-Identifier: MIT OR Apache-2.0

use std::collections::{BTreeMap, HashMap};

use rand::seq::{index::sample, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::example::{Example, ExampleKind, Span, SpanRole};
use super::vocab::{Vocab, EOS, IS, POSSESSIVE};
use crate::error::{Error, Result};
use crate::numerics::rng;

/// A functional map `(subject, relation) → object` over indexed entities.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeGraph {
    pub n_entities: usize,
    pub n_relations: usize,
    facts: BTreeMap<(usize, usize), usize>,
}

impl KnowledgeGraph {
    pub fn from_facts(
        n_entities: usize,
        n_relations: usize,
        facts: impl IntoIterator<Item = ((usize, usize), usize)>,
    ) -> Result<Self> {
        let mut map = BTreeMap::new();
        for ((s, r), o) in facts {
            if s >= n_entities || o >= n_entities || r >= n_relations {
                return Err(Error::Config(format!("fact ({s}, {r}) -> {o} outside the graph")));
            }
            if map.insert((s, r), o).is_some() {
                return Err(Error::Config(format!("subject {s} has two objects for relation {r}")));
            }
        }
        Ok(Self {
            n_entities,
            n_relations,
            facts: map,
        })
    }

    pub fn fact(&self, subject: usize, relation: usize) -> Option<usize> {
        self.facts.get(&(subject, relation)).copied()
    }

    /// `((subject, relation), object)` in ascending key order.
    pub fn facts(&self) -> impl Iterator<Item = ((usize, usize), usize)> + '_ {
        self.facts.iter().map(|(&k, &v)| (k, v))
    }

    pub fn len(&self) -> usize {
        self.facts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.facts.is_empty()
    }
}

/// Knowledge-graph task parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KgConfig {
    pub n_entities: usize,
    pub n_relations: usize,
    pub facts_per_relation: usize,
    pub multi_token: bool,
}

impl Default for KgConfig {
    fn default() -> Self {
        Self {
            n_entities: 200,
            n_relations: 8,
            facts_per_relation: 100,
            multi_token: false,
        }
    }
}

/// Each relation gets `facts_per_relation` distinct subjects; objects are
/// uniform over all entities.
pub fn gen_knowledge_graph(
    seed: u64,
    n_entities: usize,
    n_relations: usize,
    facts_per_relation: usize,
) -> Result<KnowledgeGraph> {
    if n_entities == 0 || n_relations == 0 || facts_per_relation == 0 {
        return Err(Error::Config("knowledge-graph sizes must be positive".into()));
    }
    if facts_per_relation > n_entities {
        return Err(Error::Config(format!(
            "{facts_per_relation} facts per relation need as many distinct subjects, only {n_entities} entities"
        )));
    }
    let mut r = rng(seed);
    let mut facts = Vec::with_capacity(n_relations * facts_per_relation);
    for rel in 0..n_relations {
        for s in sample(&mut r, n_entities, facts_per_relation) {
            facts.push(((s, rel), r.random_range(0..n_entities)));
        }
    }
    KnowledgeGraph::from_facts(n_entities, n_relations, facts)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HopKind {
    FirstHop,
    SecondHop,
    TwoHop,
}

/// One query derived from a composable chain `(e1, r1) → e2`, `(e2, r2) → e3`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HopQuery {
    pub kind: HopKind,
    pub e1: usize,
    pub r1: usize,
    pub e2: usize,
    pub r2: usize,
    pub e3: usize,
    /// `e2` for the first hop, `e3` otherwise.
    pub gold: usize,
    /// Answer of `(e1, r1)`, i.e. the bridge.
    pub conflict_r1: Option<usize>,
    /// Answer of `(e1, r2)` when that fact exists.
    pub conflict_r2: Option<usize>,
    /// For single hops: the same subject's answer under the chain's other
    /// relation, when defined and different from `gold`.
    pub single_hop_conflict: Option<usize>,
    pub prompt: Vec<usize>,
    pub spans: Vec<Span>,
}

impl HopQuery {
    pub fn to_example(&self, vocab: &Vocab) -> Result<Example> {
        let kind = match self.kind {
            HopKind::FirstHop => ExampleKind::FirstHop,
            HopKind::SecondHop => ExampleKind::SecondHop,
            HopKind::TwoHop => ExampleKind::TwoHop,
        };
        let mut metadata = BTreeMap::new();
        for (k, v) in [
            ("e1", Some(self.e1)),
            ("r1", Some(self.r1)),
            ("e2", Some(self.e2)),
            ("r2", Some(self.r2)),
            ("e3", Some(self.e3)),
            ("gold", Some(self.gold)),
            ("conflict_r1", self.conflict_r1),
            ("conflict_r2", self.conflict_r2),
            ("single_hop_conflict", self.single_hop_conflict),
        ] {
            if let Some(v) = v {
                metadata.insert(k.to_string(), serde_json::json!(v));
            }
        }
        Ok(Example {
            kind,
            prompt_ids: self.prompt.clone(),
            answer_ids: vec![vocab.entity(self.gold)?, EOS],
            spans: self.spans.clone(),
            metadata,
        })
    }
}

/// `"S's R is"` / `"S's R's R' is"` with entity, possessive, relation and
/// last-token spans.
pub fn hop_prompt(vocab: &Vocab, subject: usize, relations: &[(usize, &str)], subject_label: &str) -> Result<(Vec<usize>, Vec<Span>)> {
    let mut ids = Vec::new();
    let mut spans = Vec::new();
    let mut push = |ids: &mut Vec<usize>, label: String, role, toks: Vec<usize>| {
        spans.push(Span::new(label, role, ids.len()..ids.len() + toks.len()));
        ids.extend(toks);
    };
    let with_marker = |m: Option<usize>, t: usize| match m {
        Some(m) => vec![m, t],
        None => vec![t],
    };
    push(
        &mut ids,
        subject_label.into(),
        SpanRole::Entity,
        with_marker(vocab.entity_marker(), vocab.entity(subject)?),
    );
    for (k, &(rel, label)) in relations.iter().enumerate() {
        push(&mut ids, format!("s{}", k + 1), SpanRole::Possessive, vec![POSSESSIVE]);
        push(
            &mut ids,
            label.into(),
            SpanRole::Relation,
            with_marker(vocab.relation_marker(), vocab.relation(rel)?),
        );
    }
    push(&mut ids, "last".into(), SpanRole::Last, vec![IS]);
    Ok((ids, spans))
}

/// Every fact as a single-hop training example.
pub fn fact_examples(kg: &KnowledgeGraph, vocab: &Vocab) -> Result<Vec<Example>> {
    kg.facts()
        .map(|((s, r), o)| {
            let (prompt, spans) = hop_prompt(vocab, s, &[(r, "r1")], "e1")?;
            let mut metadata = BTreeMap::new();
            metadata.insert("e1".into(), serde_json::json!(s));
            metadata.insert("r1".into(), serde_json::json!(r));
            metadata.insert("gold".into(), serde_json::json!(o));
            Ok(Example {
                kind: ExampleKind::FirstHop,
                prompt_ids: prompt,
                answer_ids: vec![vocab.entity(o)?, EOS],
                spans,
                metadata,
            })
        })
        .collect()
}

/// Composable pairs `(e1, r1, e2, r2, e3)` in ascending order.
pub fn composable_pairs(kg: &KnowledgeGraph) -> Vec<(usize, usize, usize, usize, usize)> {
    let mut out = Vec::new();
    for ((e1, r1), e2) in kg.facts() {
        for r2 in 0..kg.n_relations {
            if let Some(e3) = kg.fact(e2, r2) {
                out.push((e1, r1, e2, r2, e3));
            }
        }
    }
    out
}

/// First-hop, second-hop and two-hop queries for every composable pair, in
/// seed-shuffled pair order.
pub fn make_hop_queries(kg: &KnowledgeGraph, vocab: &Vocab, seed: u64) -> Result<Vec<HopQuery>> {
    let mut pairs = composable_pairs(kg);
    pairs.shuffle(&mut rng(seed));
    let mut out = Vec::with_capacity(3 * pairs.len());
    for (e1, r1, e2, r2, e3) in pairs {
        let conflict_r2 = kg.fact(e1, r2);
        let other = |x: Option<usize>, gold: usize| x.filter(|&c| c != gold);
        let base = HopQuery {
            kind: HopKind::FirstHop,
            e1,
            r1,
            e2,
            r2,
            e3,
            gold: e2,
            conflict_r1: Some(e2),
            conflict_r2,
            single_hop_conflict: None,
            prompt: Vec::new(),
            spans: Vec::new(),
        };
        let (prompt, spans) = hop_prompt(vocab, e1, &[(r1, "r1")], "e1")?;
        out.push(HopQuery {
            single_hop_conflict: other(conflict_r2, e2),
            prompt,
            spans,
            ..base.clone()
        });
        let (prompt, spans) = hop_prompt(vocab, e2, &[(r2, "r2")], "e2")?;
        out.push(HopQuery {
            kind: HopKind::SecondHop,
            gold: e3,
            single_hop_conflict: other(kg.fact(e2, r1), e3),
            prompt,
            spans,
            ..base.clone()
        });
        let (prompt, spans) = hop_prompt(vocab, e1, &[(r1, "r1"), (r2, "r2")], "e1")?;
        out.push(HopQuery {
            kind: HopKind::TwoHop,
            gold: e3,
            prompt,
            spans,
            ..base
        });
    }
    Ok(out)
}

/// Maximum occurrences of one two-hop gold answer after filtering.
pub const MAX_GOLD_REPEATS: usize = 5;

/// Removes two-hop queries answerable by a shortcut (`e3` equals `e1` or
/// `e2`, or `(e1, r2)` already points at `e3`) and keeps at most
/// [`MAX_GOLD_REPEATS`] two-hop queries per gold answer, in input order.
/// Other query kinds pass through unchanged.
pub fn filter_shortcuts(queries: Vec<HopQuery>) -> Vec<HopQuery> {
    let mut seen: HashMap<usize, usize> = HashMap::new();
    queries
        .into_iter()
        .filter(|q| {
            if q.kind != HopKind::TwoHop {
                return true;
            }
            if q.e3 == q.e1 || q.e3 == q.e2 || q.conflict_r2 == Some(q.e3) {
                return false;
            }
            let n = seen.entry(q.gold).or_default();
            *n += 1;
            *n <= MAX_GOLD_REPEATS
        })
        .collect()
}
