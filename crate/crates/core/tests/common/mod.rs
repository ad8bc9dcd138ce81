// SPDX-License-Identifier: MIT OR Apache-2.0

//! Straight-line reference implementations used as test oracles. Nothing
//! here calls into the library's forward pass; only weights are shared.

#![allow(dead_code)]

pub mod fd;

use logitflow::model::{Activation, BackAttentionConfig, ModelConfig, Transformer, TransformerWeights};
use logitflow::numerics::Tensor;

pub type Rows = Vec<Vec<f64>>;

/// `y[o] = Σ_i w[o][i] x[i]` for `w` stored `out × in`.
pub fn apply_rows(w: &Tensor, x: &[f64]) -> Vec<f64> {
    let (o, i) = (w.shape()[0], w.shape()[1]);
    assert_eq!(i, x.len());
    (0..o)
        .map(|r| (0..i).map(|c| w.data()[r * i + c] * x[c]).sum())
        .collect()
}

/// `y[o] = Σ_i x[i] w[i][o]` for `w` stored `in × out`.
pub fn apply_cols(x: &[f64], w: &Tensor) -> Vec<f64> {
    let (i, o) = (w.shape()[0], w.shape()[1]);
    assert_eq!(i, x.len());
    (0..o)
        .map(|c| (0..i).map(|r| x[r] * w.data()[r * o + c]).sum())
        .collect()
}

pub fn rms(x: &[f64], gain: Option<&Tensor>) -> Vec<f64> {
    let ms = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
    let inv = 1.0 / (ms + 1e-6).sqrt();
    x.iter()
        .enumerate()
        .map(|(k, v)| v * inv * gain.map_or(1.0, |g| g.data()[k]))
        .collect()
}

pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn act(kind: Activation, x: f64) -> f64 {
    match kind {
        Activation::Silu => x / (1.0 + (-x).exp()),
        Activation::Relu => x.max(0.0),
    }
}

fn softmax(xs: &[f64]) -> Vec<f64> {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = xs.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

pub struct LayerOut {
    pub attn: Rows,
    pub ffn: Rows,
    pub output: Rows,
    /// `[head][query][key]`, zero above the diagonal.
    pub alpha: Vec<Rows>,
    pub coeff: Rows,
}

/// One layer, attention computed as an explicit sum over heads and key
/// positions of `α · W^o_j (W^v_j x_p)`.
pub fn layer(cfg: &ModelConfig, w: &TransformerWeights, l: usize, xs: &Rows) -> LayerOut {
    let lw = &w.layers[l];
    let (d, h) = (cfg.model_dim, cfg.num_heads);
    let dh = d / h;
    let t = xs.len();
    let normed: Rows = xs.iter().map(|x| rms_if(cfg, x, lw.attn_norm.as_ref())).collect();
    let q: Rows = normed.iter().map(|x| apply_rows(&lw.wq, x)).collect();
    let k: Rows = normed.iter().map(|x| apply_rows(&lw.wk, x)).collect();
    let v: Rows = normed.iter().map(|x| apply_rows(&lw.wv, x)).collect();
    let mut alpha = vec![vec![vec![0.0; t]; t]; h];
    let mut attn = vec![vec![0.0; d]; t];
    for j in 0..h {
        for i in 0..t {
            let scores: Vec<f64> = (0..=i)
                .map(|p| (0..dh).map(|e| q[i][j * dh + e] * k[p][j * dh + e]).sum::<f64>() / (dh as f64).sqrt())
                .collect();
            let a = softmax(&scores);
            for p in 0..=i {
                alpha[j][i][p] = a[p];
                for e in 0..dh {
                    let coeff = a[p] * v[p][j * dh + e];
                    for o in 0..d {
                        attn[i][o] += coeff * lw.wo.data()[o * d + j * dh + e];
                    }
                }
            }
        }
    }
    let mut ffn = vec![vec![0.0; d]; t];
    let mut coeff = vec![vec![0.0; cfg.ffn_width]; t];
    let mut output = Vec::with_capacity(t);
    for i in 0..t {
        let resid = add(&xs[i], &attn[i]);
        let inp = rms_if(cfg, &resid, lw.ffn_norm.as_ref());
        for kk in 0..cfg.ffn_width {
            let pre: f64 = (0..d).map(|c| lw.fc1.data()[kk * d + c] * inp[c]).sum();
            let m = act(cfg.activation, pre);
            coeff[i][kk] = m;
            for o in 0..d {
                ffn[i][o] += m * lw.fc2.data()[o * cfg.ffn_width + kk];
            }
        }
        output.push(add(&resid, &ffn[i]));
    }
    LayerOut {
        attn,
        ffn,
        output,
        alpha,
        coeff,
    }
}

fn rms_if(cfg: &ModelConfig, x: &[f64], gain: Option<&Tensor>) -> Vec<f64> {
    if cfg.normalize {
        rms(x, gain)
    } else {
        x.to_vec()
    }
}

pub fn embed(model: &Transformer, tokens: &[usize]) -> Rows {
    let d = model.config.model_dim;
    tokens
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            (0..d)
                .map(|c| model.weights.embed.data()[t * d + c] + model.weights.pos_embed.data()[i * d + c])
                .collect()
        })
        .collect()
}

pub fn unembed(model: &Transformer, h: &[f64]) -> Vec<f64> {
    let z = if model.config.normalize {
        rms(h, model.weights.final_norm.as_ref())
    } else {
        h.to_vec()
    };
    apply_rows(&model.weights.unembed, &z)
}

/// Back-attention output for every query, with explicit score-weighted sums.
pub fn back_attention(model: &Transformer, hs: &Rows, targets: &[Rows]) -> (Rows, Rows) {
    let bw = model.weights.back_attention.as_ref().unwrap();
    let dp = bw.wq.shape()[1];
    let t = hs.len();
    let norm = |x: &Vec<f64>| {
        if model.config.normalize {
            rms(x, None)
        } else {
            x.clone()
        }
    };
    let mut out = Vec::with_capacity(t);
    let mut all_scores = Vec::with_capacity(t);
    for i in 0..t {
        let q = apply_cols(&norm(&hs[i]), &bw.wq);
        let mut keys = Vec::new();
        let mut flat = vec![0.0; targets.len() * t];
        for (b, layer) in targets.iter().enumerate() {
            for p in 0..=i {
                let kn = norm(&layer[p]);
                let k = apply_cols(&kn, &bw.wk);
                let s = q.iter().zip(&k).map(|(a, b)| a * b).sum::<f64>() / (dp as f64).sqrt();
                keys.push((b, p, s, kn));
            }
        }
        let probs = softmax(&keys.iter().map(|k| k.2).collect::<Vec<_>>());
        let mut acc = vec![0.0; model.config.model_dim];
        for ((b, p, _, kn), a) in keys.iter().zip(&probs) {
            flat[b * t + p] = *a;
            let v = apply_cols(kn, &bw.wv);
            let o = apply_cols(&v, &bw.wo);
            for (x, y) in acc.iter_mut().zip(o) {
                *x += a * y;
            }
        }
        out.push(acc);
        all_scores.push(flat);
    }
    (out, all_scores)
}

/// Logits for every position, with an optional `(layer, row, value)`
/// overwrite of a final-pass layer output.
pub fn forward(model: &Transformer, tokens: &[usize], patch: Option<(usize, usize, &[f64])>) -> Rows {
    let cfg = &model.config;
    let w = &model.weights;
    let source = model.back_attention.as_ref().map(|b| b.source_layer);
    let apply_patch = |l: usize, xs: &mut Rows| {
        if let Some((pl, row, v)) = patch {
            if pl == l {
                xs[row] = v.to_vec();
            }
        }
    };
    let mut inputs = Vec::new();
    let mut outputs = Vec::new();
    let mut h = embed(model, tokens);
    for l in 0..cfg.num_layers {
        inputs.push(h.clone());
        h = layer(cfg, w, l, &h).output;
        if source.is_none_or(|s| l < s) {
            apply_patch(l, &mut h);
        }
        outputs.push(h.clone());
    }
    if let Some(ba) = &model.back_attention {
        let s = ba.source_layer;
        let range = ba.target_layers(cfg.num_layers);
        let targets: Vec<Rows> = range.map(|l| outputs[l].clone()).collect();
        let (b, _) = back_attention(model, &inputs[s], &targets);
        h = inputs[s].iter().zip(&b).map(|(x, y)| add(x, y)).collect();
        for l in s..cfg.num_layers {
            h = layer(cfg, w, l, &h).output;
            apply_patch(l, &mut h);
        }
    }
    h.iter().map(|x| unembed(model, x)).collect()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn rows_close(t: &Tensor, rows: &Rows, tol: f64) {
    assert_eq!(t.rows(), rows.len());
    for (i, r) in rows.iter().enumerate() {
        let diff = max_abs_diff(t.row(i), r);
        assert!(diff <= tol, "row {i} differs by {diff:e}");
    }
}

/// Relative closeness for reconstruction identities.
pub fn rel_close(a: &[f64], b: &[f64], tol: f64) -> bool {
    let scale = b.iter().map(|x| x.abs()).fold(1e-12, f64::max);
    max_abs_diff(a, b) <= tol * scale.max(1.0)
}

/// Seeded random model for tests.
pub fn tiny_model(layers: usize, d: usize, heads: usize, vocab: usize, seed: u64) -> Transformer {
    let mut cfg = ModelConfig::new(layers, d, heads, vocab, 16);
    cfg.seed = seed;
    let mut m = Transformer::new(cfg, None).unwrap();
    scale_weights(&mut m, 10.0);
    m
}

/// Inflates weights so tests exercise non-trivial attention patterns.
pub fn scale_weights(model: &mut Transformer, factor: f64) {
    for (name, t) in model.weights.named_mut() {
        if !name.ends_with("norm") {
            *t = t.scale(factor);
        }
    }
}

/// Random model with back attention and a non-zero output projection.
pub fn ba_model(layers: usize, ba: BackAttentionConfig, seed: u64) -> Transformer {
    let mut cfg = ModelConfig::new(layers, 8, 2, 11, 16);
    cfg.seed = seed;
    let mut m = Transformer::new(cfg, Some(ba)).unwrap();
    // Finetune mode starts with a zero output projection; give it content.
    let bw = m.weights.back_attention.as_mut().unwrap();
    bw.wo = logitflow::numerics::randn(bw.wo.shape(), 0.3, &mut logitflow::numerics::rng(seed + 99));
    scale_weights(&mut m, 8.0);
    m
}
