// SPDX-License-Identifier: MIT OR Apache-2.0

use serde::{Deserialize, Serialize};

use super::Scale;
use crate::data::{gen_arithmetic_with, ArithmeticConfig, Example, ExampleKind, Vocab};
use crate::error::Result;
use crate::model::{count_params, BackAttentionConfig, ModelConfig, Transformer};
use crate::numerics::{AdamWConfig, Scalar};
use crate::training::{evaluate_exact_match, finetune_back_attention, train, EpochRecord, TrainConfig, TrainReport};

/// Floating-point width used for training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    F32,
    #[default]
    F64,
}

/// The three arithmetic models being compared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArithVariant {
    OneLayer,
    OneLayerBack,
    TwoLayer,
}

impl ArithVariant {
    pub const ALL: [ArithVariant; 3] = [Self::OneLayer, Self::OneLayerBack, Self::TwoLayer];

    pub fn name(self) -> &'static str {
        match self {
            Self::OneLayer => "1L",
            Self::OneLayerBack => "1L+BA",
            Self::TwoLayer => "2L",
        }
    }

    pub fn layers(self) -> usize {
        match self {
            Self::TwoLayer => 2,
            _ => 1,
        }
    }

    /// Reference double-sum accuracy of the full-size run.
    pub fn paper_accuracy(self) -> f64 {
        match self {
            Self::OneLayer => 0.838,
            Self::OneLayerBack => 0.938,
            Self::TwoLayer => 0.925,
        }
    }
}

/// Everything needed to train one arithmetic model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArithSetup {
    pub model_dim: usize,
    pub num_heads: usize,
    pub back_dim: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub data: ArithmeticConfig,
    pub precision: Precision,
}

impl ArithSetup {
    /// d = 440, N = 4d, d′ = 160, lr 1e-4, batch 64, 500 epochs.
    pub fn paper() -> Self {
        Self {
            model_dim: 440,
            num_heads: 8,
            back_dim: 160,
            lr: 1e-4,
            batch_size: 64,
            epochs: 500,
            data: ArithmeticConfig::default(),
            precision: Precision::F64,
        }
    }

    /// Reduced run sized for a single CPU core.
    pub fn ci() -> Self {
        Self {
            model_dim: 64,
            num_heads: 8,
            back_dim: 64 * 160 / 440,
            lr: 2e-3,
            batch_size: 64,
            epochs: 60,
            data: ArithmeticConfig {
                n_single: 3000,
                n_double: 4000,
                max_operand: 99,
            },
            precision: Precision::F32,
        }
    }

    pub fn for_scale(scale: Scale) -> Self {
        match scale {
            Scale::Ci => Self::ci(),
            Scale::Paper => Self::paper(),
        }
    }

    pub fn model_config(&self, layers: usize, seed: u64) -> ModelConfig {
        let mut c = ModelConfig::new(layers, self.model_dim, self.num_heads, Vocab::arithmetic().len(), 16);
        c.seed = seed;
        c
    }

    pub fn back_attention(&self, variant: ArithVariant) -> Option<BackAttentionConfig> {
        (variant == ArithVariant::OneLayerBack).then(|| BackAttentionConfig::scratch(self.back_dim))
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
            ..TrainConfig::default()
        }
    }

    /// `count(1L+BA) / count(2L)`.
    pub fn param_ratio(&self) -> f64 {
        let one = count_params(&self.model_config(1, 0), self.back_attention(ArithVariant::OneLayerBack).as_ref());
        let two = count_params(&self.model_config(2, 0), None);
        one.total() as f64 / two.total() as f64
    }
}

/// Outcome of training one variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArithRun {
    pub variant: ArithVariant,
    pub seed: u64,
    pub params: usize,
    /// Best double-sum test accuracy over evaluated epochs.
    pub best_double: f64,
    pub final_double: f64,
    pub final_single: Option<f64>,
    pub report: TrainReport,
}

/// Training data, the double-sum test set used for per-epoch evaluation,
/// and the single-sum test set (evaluated once at the end).
pub fn arith_data(setup: &ArithSetup, seed: u64) -> Result<(Vec<Example>, Vec<Example>, Vec<Example>)> {
    let split = gen_arithmetic_with(seed, &setup.data)?;
    let (doubles, singles) = split.test.into_iter().partition(|e| e.kind == ExampleKind::DoubleSum);
    Ok((split.train, doubles, singles))
}

fn run_typed<S: Scalar>(
    setup: &ArithSetup,
    variant: ArithVariant,
    seed: u64,
    train_set: &[Example],
    test: &[Example],
    observer: &mut dyn FnMut(&EpochRecord),
) -> Result<(Transformer, TrainReport)> {
    let cfg = setup.model_config(variant.layers(), seed);
    let mut model = Transformer::<S>::new(cfg, setup.back_attention(variant))?;
    let report = train(&mut model, train_set, test, &setup.train_config(seed), observer)?;
    Ok((model.cast(), report))
}

/// Trains one variant and returns it (in `f64`) with its accuracy summary.
pub fn run_arith(
    setup: &ArithSetup,
    variant: ArithVariant,
    seed: u64,
    observer: &mut dyn FnMut(&EpochRecord),
) -> Result<(Transformer, ArithRun)> {
    let (train_set, test, singles) = arith_data(setup, seed)?;
    let (model, report) = match setup.precision {
        Precision::F32 => run_typed::<f32>(setup, variant, seed, &train_set, &test, observer)?,
        Precision::F64 => run_typed::<f64>(setup, variant, seed, &train_set, &test, observer)?,
    };
    let run = ArithRun {
        variant,
        seed,
        params: count_params(&model.config, model.back_attention.as_ref()).total(),
        best_double: report.best_accuracy(ExampleKind::DoubleSum).unwrap_or(0.0),
        final_double: report.final_accuracy(ExampleKind::DoubleSum).unwrap_or(0.0),
        final_single: evaluate_exact_match(&model, &singles)?.of(ExampleKind::SingleSum),
        report,
    };
    Ok((model, run))
}

/// Double-sum accuracy before and after frozen-base back-attention fine-tuning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryRun {
    pub base_double: f64,
    pub tuned_best_double: f64,
    pub tuned_final_double: f64,
    pub base_digest_unchanged: bool,
    pub zero_init_exact: bool,
    pub report: TrainReport,
}

/// Trains a deliberately short one-layer base, then fine-tunes back
/// attention on top of it with every base weight frozen.
pub fn run_recovery(
    setup: &ArithSetup,
    base_epochs: usize,
    tune_epochs: usize,
    seed: u64,
    observer: &mut dyn FnMut(&EpochRecord),
) -> Result<RecoveryRun> {
    let (train_set, doubles, _) = arith_data(setup, seed)?;
    let mut base_setup = setup.clone();
    base_setup.epochs = base_epochs;
    let mut tune_setup = setup.clone();
    tune_setup.epochs = tune_epochs;
    let cfg = setup.model_config(1, seed);
    let ba = BackAttentionConfig::finetune(setup.back_dim, 0);

    macro_rules! typed {
        ($s:ty) => {{
            let mut base = Transformer::<$s>::new(cfg, None)?;
            train(&mut base, &train_set, &[], &base_setup.train_config(seed), &mut |_| {})?;
            let base64: Transformer = base.cast();
            let base_double = evaluate_exact_match(&base64, &doubles)?.of(ExampleKind::DoubleSum).unwrap_or(0.0);
            let fresh: Transformer = base64.clone().with_back_attention(ba.clone(), seed)?;
            let probe = &doubles[0].sequence();
            let zero_init_exact = fresh.logits(probe)? == base64.logits(probe)?;
            let (tuned, report) =
                finetune_back_attention(&base, ba.clone(), &train_set, &doubles, &tune_setup.train_config(seed), observer)?;
            let tuned64: Transformer = tuned.cast();
            let base_digest_unchanged = crate::model::weights_digest(&tuned64, |n| !n.starts_with("back_attention."))
                == crate::model::weights_digest(&base64, |_| true);
            (base_double, zero_init_exact, base_digest_unchanged, report)
        }};
    }
    let (base_double, zero_init_exact, base_digest_unchanged, report) = match setup.precision {
        Precision::F32 => typed!(f32),
        Precision::F64 => typed!(f64),
    };
    Ok(RecoveryRun {
        base_double,
        tuned_best_double: report.best_accuracy(ExampleKind::DoubleSum).unwrap_or(0.0),
        tuned_final_double: report.final_accuracy(ExampleKind::DoubleSum).unwrap_or(0.0),
        base_digest_unchanged,
        zero_init_exact,
        report,
    })
}
