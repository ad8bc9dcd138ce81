// SPDX-License-Identifier: MIT OR Apache-2.0

//! Experiment configuration: preset, then TOML file, then flag overrides.

use std::path::{Path, PathBuf};

use logitflow::data::{ArithmeticConfig, KgConfig, Vocab, VocabSpec};
use logitflow::experiments::{ArithSetup, ArithVariant, KgSetup, Precision};
use logitflow::interp::{CompareConfig, FlowNormalization, SpanReduce};
use logitflow::model::{Activation, BackAttentionConfig, ModelConfig};
use logitflow::training::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    #[default]
    Arithmetic,
    Kg,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub num_layers: usize,
    pub model_dim: usize,
    pub num_heads: usize,
    /// Defaults to `4 * model_dim`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ffn_width: Option<usize>,
    pub max_positions: usize,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default = "yes")]
    pub normalize: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub arithmetic: ArithmeticConfig,
    pub kg: KgConfig,
    /// Fraction of two-hop queries placed in the knowledge-graph training set.
    pub two_hop_train_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub top_k: Option<usize>,
    pub normalization: FlowNormalization,
    pub reduce: SpanReduce,
    /// Queries analysed per command (or per case set for `compare`).
    pub max_queries: usize,
    pub patch: bool,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        Self {
            top_k: None,
            normalization: FlowNormalization::ShareOfTotal,
            reduce: SpanReduce::Last,
            max_queries: 100,
            patch: true,
        }
    }
}

/// Everything a command needs, fully resolved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    pub seed: u64,
    pub task: Task,
    pub precision: Precision,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    pub data: DataSection,
    pub model: ModelSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub back_attention: Option<BackAttentionConfig>,
    pub train: TrainConfig,
    #[serde(default)]
    pub analysis: AnalysisSection,
}

pub const PRESETS: [&str; 8] = [
    "paper-arith-1layer",
    "paper-arith-1layer-ba",
    "paper-arith-2layer",
    "ci-arith-1layer",
    "ci-arith-1layer-ba",
    "ci-arith-2layer",
    "kg-toy",
    "kg-full",
];

fn arith_preset(setup: ArithSetup, variant: ArithVariant, name: &str) -> ExperimentConfig {
    let m = setup.model_config(variant.layers(), 0);
    ExperimentConfig {
        preset: Some(name.into()),
        seed: 0,
        task: Task::Arithmetic,
        precision: setup.precision,
        out_dir: None,
        data: DataSection {
            arithmetic: setup.data,
            ..DataSection::default()
        },
        model: ModelSection {
            num_layers: m.num_layers,
            model_dim: m.model_dim,
            num_heads: m.num_heads,
            ffn_width: Some(m.ffn_width),
            max_positions: m.max_positions,
            activation: m.activation,
            normalize: m.normalize,
        },
        back_attention: setup.back_attention(variant),
        train: setup.train_config(0),
        analysis: AnalysisSection::default(),
    }
}

fn kg_preset(setup: KgSetup, name: &str) -> ExperimentConfig {
    let m = setup.model_config(0);
    ExperimentConfig {
        preset: Some(name.into()),
        seed: 0,
        task: Task::Kg,
        precision: setup.precision,
        out_dir: None,
        data: DataSection {
            kg: setup.graph,
            two_hop_train_fraction: setup.two_hop_train_fraction,
            ..DataSection::default()
        },
        model: ModelSection {
            num_layers: m.num_layers,
            model_dim: m.model_dim,
            num_heads: m.num_heads,
            ffn_width: Some(m.ffn_width),
            max_positions: m.max_positions,
            activation: m.activation,
            normalize: m.normalize,
        },
        back_attention: None,
        train: setup.train_config(0),
        analysis: AnalysisSection::default(),
    }
}

pub fn preset(name: &str) -> Result<ExperimentConfig, CliError> {
    use ArithVariant::*;
    Ok(match name {
        "paper-arith-1layer" => arith_preset(ArithSetup::paper(), OneLayer, name),
        "paper-arith-1layer-ba" => arith_preset(ArithSetup::paper(), OneLayerBack, name),
        "paper-arith-2layer" => arith_preset(ArithSetup::paper(), TwoLayer, name),
        "ci-arith-1layer" => arith_preset(ArithSetup::ci(), OneLayer, name),
        "ci-arith-1layer-ba" => arith_preset(ArithSetup::ci(), OneLayerBack, name),
        "ci-arith-2layer" => arith_preset(ArithSetup::ci(), TwoLayer, name),
        "kg-toy" => kg_preset(KgSetup::ci(), name),
        "kg-full" => kg_preset(KgSetup::full(), name),
        other => {
            return Err(CliError::Validation(format!(
                "unknown preset {other:?}; valid presets: {}",
                PRESETS.join(", ")
            )))
        }
    })
}

fn merge(base: &mut toml::Value, overlay: toml::Value) {
    match (base, overlay) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Parses `a.b.c=value`; the value is read as TOML and falls back to a string.
fn override_value(assignment: &str) -> Result<toml::Value, CliError> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Validation(format!("override {assignment:?} is not of the form key=value")))?;
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let mut out = value;
    for key in path.trim().split('.').rev() {
        if key.is_empty() {
            return Err(CliError::Validation(format!("empty key in override {assignment:?}")));
        }
        let mut t = toml::Table::new();
        t.insert(key.to_string(), out);
        out = toml::Value::Table(t);
    }
    Ok(out)
}

/// Resolves the configuration. Precedence, lowest first: built-in preset
/// (`--preset`, else the file's `preset` key, else `ci-arith-1layer`), the
/// config file, then each `--set` override in order.
pub fn resolve(file: Option<&Path>, preset_flag: Option<&str>, sets: &[String]) -> Result<ExperimentConfig, CliError> {
    let file_table = match file {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::Validation(format!("{}: {e}", p.display())))?;
            Some(
                toml::from_str::<toml::Table>(&text)
                    .map_err(|e| CliError::Validation(format!("{}: {e}", p.display())))?,
            )
        }
        None => None,
    };
    let file_preset = file_table
        .as_ref()
        .and_then(|t| t.get("preset"))
        .and_then(|v| v.as_str().map(str::to_string));
    let name = preset_flag.map(str::to_string).or(file_preset).unwrap_or_else(|| "ci-arith-1layer".into());
    let mut value = toml::Value::try_from(preset(&name)?).map_err(|e| CliError::Runtime(e.to_string()))?;
    if let Some(t) = file_table {
        merge(&mut value, toml::Value::Table(t));
    }
    for s in sets {
        merge(&mut value, override_value(s)?);
    }
    if let toml::Value::Table(t) = &mut value {
        t.insert("preset".into(), toml::Value::String(name));
    }
    let cfg: ExperimentConfig = value.try_into().map_err(|e| CliError::Validation(format!("config: {e}")))?;
    cfg.validate()?;
    Ok(cfg)
}

impl ExperimentConfig {
    pub fn vocab(&self) -> Vocab {
        match self.task {
            Task::Arithmetic => Vocab::arithmetic(),
            Task::Kg => Vocab::new(VocabSpec {
                n_entities: self.data.kg.n_entities,
                n_relations: self.data.kg.n_relations,
                multi_token: self.data.kg.multi_token,
            }),
        }
    }

    pub fn model_config(&self, vocab_size: usize) -> ModelConfig {
        let m = &self.model;
        let mut c = ModelConfig::new(m.num_layers, m.model_dim, m.num_heads, vocab_size, m.max_positions);
        c.ffn_width = m.ffn_width.unwrap_or(4 * m.model_dim);
        c.activation = m.activation;
        c.normalize = m.normalize;
        c.seed = self.seed;
        c
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    pub fn kg_setup(&self) -> KgSetup {
        KgSetup {
            graph: self.data.kg,
            num_layers: self.model.num_layers,
            model_dim: self.model.model_dim,
            num_heads: self.model.num_heads,
            lr: self.train.optimizer.lr,
            batch_size: self.train.batch_size,
            epochs: self.train.epochs,
            two_hop_train_fraction: self.data.two_hop_train_fraction,
            hop_target: self.train.early_stop.as_ref().and_then(|e| e.target).unwrap_or(1.0),
            precision: self.precision,
        }
    }

    pub fn compare_config(&self) -> CompareConfig {
        CompareConfig {
            k: self.analysis.top_k,
            normalization: self.analysis.normalization,
            patch: self.analysis.patch,
            max_per_set: Some(self.analysis.max_queries),
            seed: self.seed,
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let v = |e: logitflow::Error| CliError::Validation(e.to_string());
        self.model_config(self.vocab().len()).validate().map_err(v)?;
        if let Some(ba) = &self.back_attention {
            ba.validate(self.model.num_layers).map_err(v)?;
        }
        self.train.validate().map_err(v)?;
        if !(0.0..=1.0).contains(&self.data.two_hop_train_fraction) {
            return Err(CliError::Validation("data.two_hop_train_fraction must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config is always representable as TOML")
    }
}
