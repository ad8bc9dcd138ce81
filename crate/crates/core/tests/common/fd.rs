// SPDX-License-Identifier: MIT OR Apache-2.0

//! Finite-difference gradient oracle over the library's scalar loss.

use logitflow::data::{arithmetic_example, Vocab};
use logitflow::model::{BackAttentionConfig, ModelConfig, Transformer};
use logitflow::numerics::{randn, rng};
use logitflow::training::{loss_and_gradients, mean_loss, TrainConfig};

use super::scale_weights;

/// Fourth-order central differences on every parameter of a two-layer model with back
/// attention. Relative error is `|g − fd| / max(|g| + |fd|, 1e-7)`.
pub fn gradient_check(ba: BackAttentionConfig, seed: u64) -> (usize, f64) {
    let vocab = Vocab::arithmetic();
    let mut cfg = ModelConfig::new(2, 8, 2, vocab.len(), 16);
    cfg.seed = seed;
    let mut m = Transformer::new(cfg, Some(ba)).unwrap();
    let bw = m.weights.back_attention.as_mut().unwrap();
    bw.wo = randn(bw.wo.shape(), 0.3, &mut rng(seed + 1));
    scale_weights(&mut m, 3.0);
    let batch = vec![
        arithmetic_example(&[12, 7]),
        arithmetic_example(&[5, 81, 40]),
    ];
    let tc = TrainConfig::default();
    let (_, grads) = loss_and_gradients(&m, &batch, &tc).unwrap();
    let h = 1e-3;
    let mut worst = 0.0f64;
    let mut checked = 0;
    for (idx, (name, g)) in grads.into_iter().enumerate() {
        let g = g.unwrap_or_else(|| panic!("{name} has no gradient"));
        for i in 0..g.data().len() {
            let mut probe = m.clone();
            let x = probe.weights.named()[idx].1.data()[i];
            let mut at = |dx: f64| {
                probe.weights.named_mut()[idx].1.data_mut()[i] = x + dx;
                mean_loss(&probe, &batch, &tc).unwrap()
            };
            // Fourth-order central stencil.
            let fd = (8.0 * (at(h) - at(-h)) - (at(2.0 * h) - at(-2.0 * h))) / (12.0 * h);
            let a = g.data()[i];
            let rel = (a - fd).abs() / (a.abs() + fd.abs()).max(1e-7);
            worst = worst.max(rel);
            checked += 1;
        }
    }
    (checked, worst)
}
