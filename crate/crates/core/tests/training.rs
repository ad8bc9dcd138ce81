// SPDX-License-Identifier: MIT OR Apache-2.0

mod common;

use logitflow::data::{arithmetic_example, gen_arithmetic_with, ArithmeticConfig, Example, ExampleKind, Vocab};
use logitflow::model::{weights_digest, BackAttentionConfig, Checkpoint, ModelConfig, Transformer};
use logitflow::numerics::AdamWConfig;
use logitflow::training::*;
use logitflow::Error;

fn arith_model(layers: usize, d: usize, seed: u64) -> Transformer {
    let mut cfg = ModelConfig::new(layers, d, 2, Vocab::arithmetic().len(), 16);
    cfg.seed = seed;
    Transformer::new(cfg, None).unwrap()
}

fn small_split(seed: u64) -> (Vec<Example>, Vec<Example>) {
    let cfg = ArithmeticConfig {
        n_single: 60,
        n_double: 40,
        max_operand: 99,
    };
    let s = gen_arithmetic_with(seed, &cfg).unwrap();
    (s.train, s.test)
}

fn config(epochs: usize, lr: f64) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 16,
        optimizer: AdamWConfig {
            lr,
            ..AdamWConfig::default()
        },
        ..TrainConfig::default()
    }
}

#[test]
fn zero_epochs_is_a_no_op() {
    let mut m = arith_model(1, 16, 1);
    let before = m.clone();
    let (train_set, test) = small_split(1);
    let report = train(&mut m, &train_set, &test, &config(0, 1e-3), &mut |_| {}).unwrap();
    assert!(report.epochs.is_empty());
    assert!(report.train_losses().is_empty());
    assert_eq!(m, before);
}

#[test]
fn single_example_overfits() {
    let mut m = arith_model(1, 32, 2);
    let ex = vec![arithmetic_example(&[47, 38])];
    let mut cfg = config(500, 3e-3);
    cfg.batch_size = 1;
    cfg.optimizer.weight_decay = 0.0;
    cfg.early_stop = None;
    let report = train(&mut m, &ex, &ex, &cfg, &mut |_| {}).unwrap();
    let losses = report.train_losses();
    let hit = losses.iter().position(|&l| l < 0.01);
    assert!(hit.is_some(), "final loss {}", losses.last().unwrap());
    // Memorized: exact match on the training example.
    assert_eq!(evaluate_exact_match(&m, &ex).unwrap().overall(), Some(1.0));
    // Non-increasing after warmup, up to rounding.
    let warmup = 50;
    for (i, w) in losses[warmup..].windows(2).enumerate() {
        assert!(w[1] <= w[0] * (1.0 + 1e-9) + 1e-12, "step {}: {} -> {}", warmup + i, w[0], w[1]);
    }
}

#[test]
fn training_is_deterministic() {
    let (train_set, test) = small_split(3);
    let run = |seed: u64| {
        let mut m = arith_model(1, 16, 3);
        let mut cfg = config(3, 1e-3);
        cfg.seed = seed;
        let r = train(&mut m, &train_set, &test, &cfg, &mut |_| {}).unwrap();
        (weights_digest(&m, |_| true), r.train_losses())
    };
    let a = run(7);
    assert_eq!(a, run(7));
    assert_ne!(a.0, run(8).0);
}

#[test]
fn non_finite_loss_aborts_with_location() {
    let mut m = arith_model(1, 16, 4);
    m.weights.unembed.data_mut()[3] = f64::NAN;
    let (train_set, test) = small_split(4);
    match train(&mut m, &train_set, &test, &config(2, 1e-3), &mut |_| {}) {
        Err(Error::NonFiniteLoss { epoch, batch, .. }) => assert_eq!((epoch, batch), (1, 0)),
        other => panic!("expected NonFiniteLoss, got {other:?}"),
    }
}

#[test]
fn invalid_config_is_rejected() {
    let mut m = arith_model(1, 16, 4);
    let mut cfg = config(1, 1e-3);
    cfg.batch_size = 0;
    assert!(matches!(train(&mut m, &[], &[], &cfg, &mut |_| {}), Err(Error::Config(_))));
}

#[test]
fn accuracy_matches_greedy_recount() {
    let (train_set, test) = small_split(5);
    let mut m = arith_model(1, 32, 5);
    train(&mut m, &train_set, &[], &config(15, 3e-3), &mut |_| {}).unwrap();
    let sample: Vec<Example> = train_set.iter().chain(&test).take(50).cloned().collect();
    let acc = evaluate_exact_match(&m, &sample).unwrap();
    let mut by_kind = std::collections::BTreeMap::<ExampleKind, (usize, usize)>::new();
    for e in &sample {
        let out = m.generate_greedy(&e.prompt_ids, e.answer_ids.len(), None).unwrap();
        let ok = out[e.prompt_ids.len()..] == e.answer_ids[..];
        assert_eq!(ok, greedy_exact_match(&m, e).unwrap());
        let c = by_kind.entry(e.kind).or_default();
        c.0 += usize::from(ok);
        c.1 += 1;
    }
    assert_eq!(acc.counts, by_kind);
}

#[test]
fn untrained_model_is_near_chance() {
    let m = arith_model(1, 32, 6);
    let (_, test) = small_split(6);
    let acc = evaluate_exact_match(&m, &test).unwrap();
    assert!(acc.of(ExampleKind::DoubleSum).unwrap() < 0.05);
    let empty = evaluate_exact_match(&m, &[]).unwrap();
    assert!(empty.is_empty() && empty.overall().is_none());
}

#[test]
fn frozen_prefixes_keep_weights_bit_identical() {
    let (train_set, _) = small_split(7);
    let mut m = arith_model(2, 16, 7);
    let frozen = |n: &str| n.starts_with("layers.0.") || n == "embed";
    let before = weights_digest(&m, frozen);
    let others = weights_digest(&m, |n| !frozen(n));
    let mut cfg = config(2, 1e-3);
    cfg.frozen = vec!["layers.0.".into(), "embed".into()];
    train(&mut m, &train_set, &[], &cfg, &mut |_| {}).unwrap();
    assert_eq!(weights_digest(&m, frozen), before);
    assert_ne!(weights_digest(&m, |n| !frozen(n)), others);
}

#[test]
fn finetune_with_zero_steps_reproduces_base() {
    let base = arith_model(2, 16, 8);
    let (train_set, test) = small_split(8);
    let (m, report) = finetune_back_attention(
        &base,
        BackAttentionConfig::finetune(8, 1),
        &train_set,
        &test,
        &config(0, 1e-3),
        &mut |_| {},
    )
    .unwrap();
    assert!(report.epochs.is_empty());
    let toks = &train_set[0].sequence();
    assert_eq!(m.logits(toks).unwrap(), base.logits(toks).unwrap());
}

#[test]
fn finetune_touches_only_back_attention() {
    let base = arith_model(2, 16, 9);
    let (train_set, test) = small_split(9);
    let is_base = |n: &str| !n.starts_with(BACK_ATTENTION_PREFIX);
    let (m, _) = finetune_back_attention(
        &base,
        BackAttentionConfig::finetune(8, 1),
        &train_set,
        &test,
        &config(2, 1e-3),
        &mut |_| {},
    )
    .unwrap();
    assert_eq!(weights_digest(&m, is_base), weights_digest(&base, |_| true));
    let fresh = base.clone().with_back_attention(BackAttentionConfig::finetune(8, 1), 0).unwrap();
    assert_ne!(
        weights_digest(&m, |n| !is_base(n)),
        weights_digest(&fresh, |n| !is_base(n))
    );
    assert!(matches!(
        finetune_back_attention(&m, BackAttentionConfig::scratch(8), &train_set, &test, &config(1, 1e-3), &mut |_| {}),
        Err(Error::Config(_))
    ));
}

#[test]
fn checkpoints_and_report_are_written() {
    let dir = tempfile::tempdir().unwrap();
    let (train_set, test) = small_split(10);
    let mut m = arith_model(1, 16, 10);
    let mut cfg = config(2, 1e-3);
    cfg.checkpoint_dir = Some(dir.path().to_path_buf());
    cfg.checkpoint_every = 1;
    let mut lines = Vec::new();
    let report = train(&mut m, &train_set, &test, &cfg, &mut |r| lines.push(r.progress_line())).unwrap();
    assert_eq!(report.epochs.len(), 2);
    assert!(lines[0].starts_with("epoch=1 loss="), "{}", lines[0]);
    assert!(lines[0].contains("acc.double_sum="));
    for f in ["epoch_0001.ckpt", "epoch_0002.ckpt", "final.ckpt", "report.json"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let loaded = Checkpoint::load(&dir.path().join("final.ckpt")).unwrap();
    assert_eq!(loaded.model, m);
    let json: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(json["epochs"].as_array().unwrap().len(), 2);
}

#[test]
fn early_stop_on_target() {
    let ex = vec![arithmetic_example(&[3, 4])];
    let mut m = arith_model(1, 32, 11);
    let mut cfg = config(500, 3e-3);
    cfg.batch_size = 1;
    cfg.early_stop = Some(EarlyStop {
        kind: ExampleKind::SingleSum,
        target: Some(1.0),
        patience: None,
    });
    let report = train(&mut m, &ex, &ex, &cfg, &mut |_| {}).unwrap();
    assert!(report.stopped_early);
    assert!(report.epochs.len() < 500);
    assert_eq!(report.final_accuracy(ExampleKind::SingleSum), Some(1.0));
    assert_eq!(report.best_accuracy(ExampleKind::SingleSum), Some(1.0));
}

#[test]
fn answer_only_loss_ignores_prompt_tokens() {
    let m = arith_model(1, 16, 12);
    let (train_set, _) = small_split(12);
    let all = mean_loss(&m, &train_set, &TrainConfig::default()).unwrap();
    let answer = mean_loss(
        &m,
        &train_set,
        &TrainConfig {
            loss_mode: LossMode::AnswerOnly,
            ..TrainConfig::default()
        },
    )
    .unwrap();
    assert!(all.is_finite() && answer.is_finite() && all != answer);
}

#[test]
fn gradients_match_finite_differences() {
    for ba in [BackAttentionConfig::finetune(4, 1), BackAttentionConfig::scratch(4)] {
        let (n, worst) = common::fd::gradient_check(ba, 13);
        assert!(n > 1000);
        assert!(worst < 1e-4, "worst relative error {worst:e}");
    }
}
