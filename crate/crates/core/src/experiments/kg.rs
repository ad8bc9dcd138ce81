// SPDX-License-Identifier: MIT OR Apache-2.0

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::arith::Precision;
use super::Scale;
use crate::data::{
    fact_examples, filter_shortcuts, gen_knowledge_graph, make_hop_queries, Example, ExampleKind, HopKind, HopQuery,
    KgConfig, KnowledgeGraph, Vocab, VocabSpec,
};
use crate::error::Result;
use crate::model::{BackAttentionConfig, ModelConfig, Transformer};
use crate::numerics::{rng, AdamWConfig};
use crate::training::{evaluate_exact_match, train, Accuracy, EarlyStop, EpochRecord, TrainConfig, TrainReport};

/// A toy knowledge-graph model and its training recipe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KgSetup {
    pub graph: KgConfig,
    pub num_layers: usize,
    pub model_dim: usize,
    pub num_heads: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Upper bound; training stops once single-hop accuracy reaches `hop_target`.
    pub epochs: usize,
    /// Fraction of (filtered) two-hop queries added to the training set.
    pub two_hop_train_fraction: f64,
    pub hop_target: f64,
    pub precision: Precision,
}

impl KgSetup {
    pub fn ci() -> Self {
        Self {
            graph: KgConfig {
                n_entities: 120,
                n_relations: 6,
                facts_per_relation: 60,
                multi_token: false,
            },
            num_layers: 6,
            model_dim: 64,
            num_heads: 4,
            lr: 3e-3,
            batch_size: 32,
            epochs: 300,
            two_hop_train_fraction: 0.5,
            hop_target: 0.97,
            precision: Precision::F32,
        }
    }

    pub fn full() -> Self {
        Self {
            graph: KgConfig::default(),
            model_dim: 128,
            num_heads: 8,
            epochs: 500,
            ..Self::ci()
        }
    }

    pub fn for_scale(scale: Scale) -> Self {
        match scale {
            Scale::Ci => Self::ci(),
            Scale::Paper => Self::full(),
        }
    }

    pub fn vocab(&self) -> Vocab {
        Vocab::new(VocabSpec {
            n_entities: self.graph.n_entities,
            n_relations: self.graph.n_relations,
            multi_token: self.graph.multi_token,
        })
    }

    pub fn model_config(&self, seed: u64) -> ModelConfig {
        let mut c = ModelConfig::new(self.num_layers, self.model_dim, self.num_heads, self.vocab().len(), 16);
        c.seed = seed;
        c
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            optimizer: AdamWConfig {
                lr: self.lr,
                ..AdamWConfig::default()
            },
            batch_size: self.batch_size,
            epochs: self.epochs,
            seed,
            eval_every: 5,
            early_stop: Some(EarlyStop {
                kind: ExampleKind::FirstHop,
                target: Some(self.hop_target),
                patience: None,
            }),
            ..TrainConfig::default()
        }
    }
}

/// Graph, prompts and the split between trained and held-out two-hop queries.
#[derive(Debug, Clone)]
pub struct KgTask {
    pub vocab: Vocab,
    pub graph: KnowledgeGraph,
    /// Filtered queries of all kinds.
    pub queries: Vec<HopQuery>,
    pub train: Vec<Example>,
    /// Distinct single-hop facts used in some chain (first or second hop).
    pub first_hop: Vec<Example>,
    pub second_hop: Vec<Example>,
    pub two_hop_trained: Vec<HopQuery>,
    pub two_hop_held_out: Vec<HopQuery>,
}

fn dedup(queries: &[HopQuery], kind: HopKind, vocab: &Vocab) -> Result<Vec<Example>> {
    let mut seen = BTreeSet::new();
    queries
        .iter()
        .filter(|q| q.kind == kind && seen.insert(q.prompt.clone()))
        .map(|q| q.to_example(vocab))
        .collect()
}

pub fn build_kg_task(setup: &KgSetup, seed: u64) -> Result<KgTask> {
    let g = &setup.graph;
    let graph = gen_knowledge_graph(seed, g.n_entities, g.n_relations, g.facts_per_relation)?;
    let vocab = setup.vocab();
    let queries = filter_shortcuts(make_hop_queries(&graph, &vocab, seed)?);
    let mut two_hop: Vec<HopQuery> = queries.iter().filter(|q| q.kind == HopKind::TwoHop).cloned().collect();
    two_hop.shuffle(&mut rng(seed ^ 0x2B0F));
    let cut = (two_hop.len() as f64 * setup.two_hop_train_fraction).round() as usize;
    let held_out = two_hop.split_off(cut.min(two_hop.len()));
    let mut train = fact_examples(&graph, &vocab)?;
    for q in &two_hop {
        train.push(q.to_example(&vocab)?);
    }
    Ok(KgTask {
        first_hop: dedup(&queries, HopKind::FirstHop, &vocab)?,
        second_hop: dedup(&queries, HopKind::SecondHop, &vocab)?,
        vocab,
        graph,
        queries,
        train,
        two_hop_trained: two_hop,
        two_hop_held_out: held_out,
    })
}

#[derive(Debug, Clone)]
pub struct KgRun {
    pub task: KgTask,
    pub model: Transformer,
    pub report: TrainReport,
    /// Exact match on first-hop, second-hop and all two-hop queries.
    pub accuracy: Accuracy,
}

impl KgRun {
    pub fn hop_accuracy(&self, kind: ExampleKind) -> f64 {
        self.accuracy.of(kind).unwrap_or(0.0)
    }

    pub fn two_hop(&self) -> Vec<HopQuery> {
        self.task.two_hop_trained.iter().chain(&self.task.two_hop_held_out).cloned().collect()
    }
}

/// Trains a toy model on every fact plus part of the two-hop queries.
pub fn train_kg_model(
    setup: &KgSetup,
    seed: u64,
    back_attention: Option<BackAttentionConfig>,
    observer: &mut dyn FnMut(&EpochRecord),
) -> Result<KgRun> {
    let task = build_kg_task(setup, seed)?;
    let cfg = setup.model_config(seed);
    let eval: Vec<Example> = task.first_hop.clone();
    let tc = setup.train_config(seed);
    let (model, report) = match setup.precision {
        Precision::F32 => {
            let mut m = Transformer::<f32>::new(cfg, back_attention)?;
            let r = train(&mut m, &task.train, &eval, &tc, observer)?;
            (m.cast::<f64>(), r)
        }
        Precision::F64 => {
            let mut m = Transformer::<f64>::new(cfg, back_attention)?;
            let r = train(&mut m, &task.train, &eval, &tc, observer)?;
            (m, r)
        }
    };
    let mut all = task.first_hop.clone();
    all.extend(task.second_hop.iter().cloned());
    for q in task.two_hop_trained.iter().chain(&task.two_hop_held_out) {
        all.push(q.to_example(&task.vocab)?);
    }
    let accuracy = evaluate_exact_match(&model, &all)?;
    Ok(KgRun {
        task,
        model,
        report,
        accuracy,
    })
}
