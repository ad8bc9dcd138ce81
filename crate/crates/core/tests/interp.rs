// SPDX-License-Identifier: MIT OR Apache-2.0

mod common;

use common::*;
use logitflow::data::{hop_prompt, HopKind, HopQuery, Span, SpanRole, Vocab, VocabSpec};
use logitflow::interp::*;
use logitflow::model::{Activation, BackAttentionConfig, ModelConfig, Transformer};
use logitflow::numerics::{randn, rng, Tensor};
use logitflow::Error;
use proptest::prelude::*;

fn log_softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + z.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
    z.iter().map(|x| x - lse).collect()
}

fn oracle_lp(model: &Transformer, v: &[f64], s: usize) -> f64 {
    log_softmax(&unembed(model, v))[s]
}

fn random_prompt(seed: u64, len: usize, vocab: usize) -> Vec<usize> {
    use rand::Rng;
    let mut r = rng(seed);
    (0..len).map(|_| r.random_range(0..vocab)).collect()
}

/// Per-layer inputs recomputed by the straight-line oracle.
fn oracle_inputs(model: &Transformer, tokens: &[usize]) -> (Vec<Rows>, Vec<LayerOut>) {
    let mut h = embed(model, tokens);
    let mut ins = Vec::new();
    let mut outs = Vec::new();
    for l in 0..model.config.num_layers {
        ins.push(h.clone());
        let o = layer(&model.config, &model.weights, l, &h);
        h = o.output.clone();
        outs.push(o);
    }
    (ins, outs)
}

fn no_norm_model(seed: u64) -> Transformer {
    let mut cfg = ModelConfig::new(2, 8, 2, 11, 16);
    cfg.normalize = false;
    cfg.seed = seed;
    Transformer::new(cfg, None).unwrap()
}

#[test]
fn lens_matches_model_output() {
    let m = tiny_model(2, 8, 2, 11, 1);
    let toks = [3, 1, 4, 1, 5];
    let tr = m.trace(&toks).unwrap();
    let lp = logit_lens(&m, tr.layer(1).output.row(4));
    assert!(max_abs_diff(&lp, tr.log_probs.row(4)) < 1e-12);
}

#[test]
fn lens_alignment_without_normalization() {
    // Wide enough that random unembedding rows are nearly orthogonal.
    let mut cfg = ModelConfig::new(1, 64, 2, 11, 16);
    cfg.normalize = false;
    let m = Transformer::new(cfg, None).unwrap();
    for s in 0..11 {
        let v: Vec<f64> = m.weights.unembed.row(s).iter().map(|x| 1e4 * x).collect();
        let lp = LogitLens::raw(&m).log_probs(&v);
        assert_eq!(logitflow::numerics::argmax(&lp), s);
    }
}

#[test]
fn lens_matches_projection_oracle() {
    let m = tiny_model(2, 8, 2, 11, 3);
    for seed in 0..10 {
        let v = randn(&[8], 2.0, &mut rng(seed)).data().to_vec();
        let lp = logit_lens(&m, &v);
        let expect = log_softmax(&unembed(&m, &v));
        assert!(max_abs_diff(&lp, &expect) < 1e-9);
    }
}

fn assert_decomposition(m: &Transformer, toks: &[usize]) {
    let tr = m.trace(toks).unwrap();
    for l in 0..m.config.num_layers {
        for i in 0..toks.len() {
            let f = decompose_ffn(m, &tr, l, i).unwrap();
            assert_eq!(f.len(), m.config.ffn_width);
            let mut sum = vec![0.0; 8];
            for n in &f {
                assert_eq!(n.vector.len(), 8);
                for (s, v) in sum.iter_mut().zip(&n.vector) {
                    *s += v;
                }
            }
            assert!(rel_close(&sum, tr.layer(l).ffn_out.row(i), 1e-9), "ffn l={l} i={i}");

            let a = decompose_attention(m, &tr, l, i).unwrap();
            assert_eq!(a.len(), m.config.num_heads * (i + 1) * m.config.head_dim());
            let mut sum = vec![0.0; 8];
            for n in &a {
                for (s, v) in sum.iter_mut().zip(&n.vector) {
                    *s += v;
                }
            }
            assert!(rel_close(&sum, tr.layer(l).attn_out.row(i), 1e-9), "attn l={l} i={i}");
        }
    }
}

#[test]
fn decompositions_reconstruct_sublayer_outputs() {
    for seed in 0..20 {
        let m = tiny_model(2, 8, 2, 11, seed);
        assert_decomposition(&m, &random_prompt(seed + 100, 1 + seed as usize % 9, 11));
    }
    // Also through the final pass of a back-attention model.
    let m = ba_model(3, BackAttentionConfig::finetune(4, 1), 5);
    assert_decomposition(&m, &[1, 2, 3, 4, 5]);
}

#[test]
fn ffn_coefficients_match_inner_product_oracle() {
    let m = tiny_model(2, 8, 2, 11, 7);
    let toks = [2, 7, 1, 8];
    let tr = m.trace(&toks).unwrap();
    let (_, outs) = oracle_inputs(&m, &toks);
    for l in 0..2 {
        for i in 0..4 {
            for n in decompose_ffn(&m, &tr, l, i).unwrap() {
                assert!((n.coefficient - outs[l].coeff[i][n.index]).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn zero_coefficient_neurons_are_zero_vectors() {
    let mut cfg = ModelConfig::new(1, 8, 2, 11, 16);
    cfg.activation = Activation::Relu;
    let m = Transformer::new(cfg, None).unwrap();
    let tr = m.trace(&[1, 2, 3]).unwrap();
    let f = decompose_ffn(&m, &tr, 0, 2).unwrap();
    let zeros: Vec<_> = f.iter().filter(|n| n.coefficient == 0.0).collect();
    assert!(!zeros.is_empty());
    assert!(zeros.iter().all(|n| n.vector.iter().all(|&x| x == 0.0)));
}

#[test]
fn attention_betas_match_value_oracle() {
    let m = tiny_model(2, 8, 2, 11, 9);
    let toks = [4, 4, 0, 9, 3];
    let tr = m.trace(&toks).unwrap();
    let (ins, outs) = oracle_inputs(&m, &toks);
    let dh = m.config.head_dim();
    let q = 4;
    for l in 0..2 {
        let lw = &m.weights.layers[l];
        for n in decompose_attention(&m, &tr, l, q).unwrap() {
            let j = n.head.unwrap();
            let ch = j * dh + n.index;
            let x = rms(&ins[l][n.position], lw.attn_norm.as_ref());
            let beta: f64 = lw.wv.row(ch).iter().zip(&x).map(|(a, b)| a * b).sum();
            let alpha = outs[l].alpha[j][q][n.position];
            assert!((n.coefficient - alpha * beta).abs() < 1e-9);
        }
    }
}

#[test]
fn one_hot_attention_silences_other_positions() {
    let m = tiny_model(1, 8, 2, 11, 10);
    let mut tr = m.trace(&[1, 2, 3, 4]).unwrap();
    let p = 1;
    for head in &mut tr.pass1[0].attn_scores {
        for k in 0..4 {
            head.data_mut()[3 * 4 + k] = if k == p { 1.0 } else { 0.0 };
        }
    }
    for n in decompose_attention(&m, &tr, 0, 3).unwrap() {
        if n.position != p {
            assert_eq!(n.coefficient, 0.0);
        }
    }
}

#[test]
fn importance_of_zero_vector_is_exactly_zero() {
    let m = tiny_model(2, 8, 2, 11, 11);
    let lens = LogitLens::new(&m);
    for seed in 0..20 {
        let h = randn(&[8], 3.0, &mut rng(seed)).data().to_vec();
        assert_eq!(importance_score(&lens, &[0.0; 8], &h, seed as usize % 11), 0.0);
    }
}

#[test]
fn importance_of_aligned_vector_is_positive() {
    let m = no_norm_model(12);
    let lens = LogitLens::raw(&m);
    let h = randn(&[8], 1.0, &mut rng(5)).data().to_vec();
    for s in 0..11 {
        assert!(lens.log_prob(&h, s) < 0.0);
        let v: Vec<f64> = m.weights.unembed.row(s).iter().map(|x| 1e4 * x).collect();
        assert!(importance_score(&lens, &v, &h, s) > 0.0);
    }
}

#[test]
fn importance_matches_definition_oracle() {
    let m = tiny_model(2, 8, 2, 11, 13);
    let lens = LogitLens::new(&m);
    for seed in 0..10 {
        let v = randn(&[8], 1.0, &mut rng(seed)).data().to_vec();
        let h = randn(&[8], 1.0, &mut rng(seed + 50)).data().to_vec();
        let s = seed as usize % 11;
        let expect = oracle_lp(&m, &add(&v, &h), s) - oracle_lp(&m, &h, s);
        assert!((importance_score(&lens, &v, &h, s) - expect).abs() < 1e-9);
    }
}

/// Exhaustive attention-neuron scoring from the straight-line oracle.
fn brute_force_attention(m: &Transformer, toks: &[usize], s: usize) -> Vec<(f64, (usize, usize, usize, usize))> {
    let (ins, outs) = oracle_inputs(m, toks);
    let q = toks.len() - 1;
    let dh = m.config.head_dim();
    let mut all = Vec::new();
    for l in 0..m.config.num_layers {
        let lw = &m.weights.layers[l];
        for p in 0..=q {
            let x = rms(&ins[l][p], lw.attn_norm.as_ref());
            for j in 0..m.config.num_heads {
                for e in 0..dh {
                    let ch = j * dh + e;
                    let beta: f64 = lw.wv.row(ch).iter().zip(&x).map(|(a, b)| a * b).sum();
                    let c = outs[l].alpha[j][q][p] * beta;
                    let v: Vec<f64> = (0..8).map(|o| c * lw.wo.get2(o, ch)).collect();
                    let imp = oracle_lp(m, &add(&v, &ins[l][q]), s) - oracle_lp(m, &ins[l][q], s);
                    all.push((imp, (l, p, j, e)));
                }
            }
        }
    }
    all.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    all
}

#[test]
fn top_attention_neurons_match_brute_force() {
    let m = tiny_model(2, 8, 2, 11, 14);
    let toks = [5, 3, 9, 1, 6];
    let tr = m.trace(&toks).unwrap();
    let s = 7;
    let top = top_attention_neurons(&m, &tr, s, 5).unwrap();
    let brute = brute_force_attention(&m, &toks, s);
    assert_eq!(top.len(), 5);
    for (n, (imp, key)) in top.iter().zip(&brute) {
        assert_eq!((n.layer, n.position, n.head.unwrap(), n.index), *key);
        assert!((n.importance - imp).abs() < 1e-9);
    }
}

#[test]
fn full_ranking_is_non_increasing_and_clamped() {
    let m = tiny_model(2, 8, 2, 11, 15);
    let tr = m.trace(&[1, 2, 3]).unwrap();
    let total = score_attention_neurons(&m, &tr, 4).unwrap().len();
    assert_eq!(total, 2 * 2 * 3 * 4);
    let all = top_attention_neurons(&m, &tr, 4, total + 10).unwrap();
    assert_eq!(all.len(), total);
    assert!(all.windows(2).all(|w| w[0].importance >= w[1].importance));
    let again = top_attention_neurons(&m, &tr, 4, total).unwrap();
    assert_eq!(all, again);
    let ffn = top_ffn_neurons(&m, &tr, 4, 1000).unwrap();
    assert_eq!(ffn.len(), 2 * m.config.ffn_width);
    assert!(ffn.windows(2).all(|w| w[0].importance >= w[1].importance));
}

#[test]
fn default_top_k_scales_down() {
    assert_eq!(default_top_k(1_000_000), 300);
    assert_eq!(default_top_k(960), 96);
    assert_eq!(default_top_k(3), 1);
}

#[test]
fn shallow_attribution_matches_double_loop_oracle() {
    let m = tiny_model(3, 8, 2, 11, 16);
    let toks = [8, 2, 5, 0];
    let tr = m.trace(&toks).unwrap();
    let top = top_attention_neurons(&m, &tr, 3, 12).unwrap();
    let got = shallow_ffn_attribution(&m, &tr, &top).unwrap();
    let (ins, outs) = oracle_inputs(&m, &toks);
    let dh = m.config.head_dim();
    let n_ffn = m.config.ffn_width;
    for l2 in 0..3 {
        for p in 0..4 {
            for k in 0..n_ffn {
                let mut expect = 0.0;
                for n in &top {
                    if n.position != p || l2 >= n.layer {
                        continue;
                    }
                    let lw = &m.weights.layers[n.layer];
                    let ch = n.head.unwrap() * dh + n.index;
                    let h = &ins[n.layer][p];
                    let inv = 1.0 / (h.iter().map(|x| x * x).sum::<f64>() / 8.0 + 1e-6).sqrt();
                    let gain = lw.attn_norm.as_ref().unwrap();
                    let mut dotp = 0.0;
                    for o in 0..8 {
                        let u = lw.wv.get2(ch, o) * gain.data()[o] * inv;
                        let f = outs[l2].coeff[p][k] * m.weights.layers[l2].fc2.get2(o, k);
                        dotp += u * f;
                    }
                    expect += n.importance * dotp;
                }
                let g = got[l2].get2(p, k);
                assert!((g - expect).abs() <= 1e-8 * expect.abs().max(1.0), "l={l2} p={p} k={k}: {g} vs {expect}");
            }
        }
    }
}

#[test]
fn shallow_attribution_edge_cases() {
    let mut m = tiny_model(2, 8, 2, 11, 17);
    let tr = m.trace(&[1, 2, 3]).unwrap();
    let empty = shallow_ffn_attribution(&m, &tr, &[]).unwrap();
    assert!(empty.iter().all(|t| t.max_abs() == 0.0));
    // A zero FFN column is orthogonal to every subkey.
    let fc2 = &mut m.weights.layers[0].fc2;
    let cols = fc2.cols();
    for o in 0..8 {
        fc2.data_mut()[o * cols + 5] = 0.0;
    }
    let tr = m.trace(&[1, 2, 3]).unwrap();
    let top = top_attention_neurons(&m, &tr, 2, 20).unwrap();
    let a = shallow_ffn_attribution(&m, &tr, &top).unwrap();
    for p in 0..3 {
        assert_eq!(a[0].get2(p, 5), 0.0);
    }
    let ffn = top_ffn_neurons(&m, &tr, 2, 1).unwrap();
    assert!(matches!(shallow_ffn_attribution(&m, &tr, &ffn), Err(Error::Contract(_))));
}

#[test]
fn single_top_neuron_fills_one_cell() {
    let m = tiny_model(2, 8, 2, 11, 18);
    let tr = m.trace(&[3, 3, 7]).unwrap();
    let top = top_attention_neurons(&m, &tr, 6, 1).unwrap();
    let map = aggregate_logit_flow(&m, &tr, 6, Some(1), None, FlowNormalization::Raw).unwrap();
    assert_eq!(map.attn_importance.shape(), &[2, 3]);
    for l in 0..2 {
        for p in 0..3 {
            let v = map.attn_importance.get2(l, p);
            if (l, p) == (top[0].layer, top[0].position) {
                assert_eq!(v, top[0].importance);
            } else {
                assert_eq!(v, 0.0);
            }
        }
    }
}

fn multi_token_setup() -> (Vocab, Vec<usize>, Vec<Span>) {
    let vocab = Vocab::new(VocabSpec {
        n_entities: 5,
        n_relations: 3,
        multi_token: true,
    });
    let (ids, spans) = hop_prompt(&vocab, 2, &[(1, "r1"), (0, "r2")], "e1").unwrap();
    (vocab, ids, spans)
}

#[test]
fn spans_sum_their_token_columns() {
    let (vocab, ids, spans) = multi_token_setup();
    let m = tiny_model(2, 8, 2, vocab.len(), 19);
    let tr = m.trace(&ids).unwrap();
    let raw = aggregate_logit_flow(&m, &tr, 4, Some(40), None, FlowNormalization::Raw).unwrap();
    let grouped = aggregate_logit_flow(&m, &tr, 4, Some(40), Some(&spans), FlowNormalization::Raw).unwrap();
    assert_eq!(grouped.labels, ["e1", "s1", "r1", "s2", "r2", "last"]);
    let e1 = &spans[0];
    assert_eq!(e1.range().len(), 2);
    for l in 0..2 {
        let expect = raw.attn_importance.get2(l, 0) + raw.attn_importance.get2(l, 1);
        assert!((grouped.attn_importance.get2(l, 0) - expect).abs() < 1e-12);
        let expect = raw.ffn_attribution.get2(l, 0) + raw.ffn_attribution.get2(l, 1);
        assert!((grouped.ffn_attribution.get2(l, 0) - expect).abs() < 1e-12);
    }
    let bad = vec![Span::new("x", SpanRole::Entity, 0..3)];
    assert!(matches!(
        aggregate_logit_flow(&m, &tr, 4, None, Some(&bad), FlowNormalization::Raw),
        Err(Error::Span(_))
    ));
}

#[test]
fn share_of_total_sums_to_one() {
    let m = tiny_model(2, 8, 2, 11, 20);
    let tr = m.trace(&[1, 5, 2, 8]).unwrap();
    let map = aggregate_logit_flow(&m, &tr, 3, Some(10), None, FlowNormalization::ShareOfTotal).unwrap();
    for t in [&map.attn_importance, &map.ffn_importance, &map.ffn_attribution] {
        if t.max_abs() > 0.0 {
            assert!((t.sum() - 1.0).abs() < 1e-9);
        }
    }
    let total: f64 = map.labels.iter().map(|l| map.attn_share(l).unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-9);
}

#[test]
fn self_patch_has_no_effect() {
    let m = tiny_model(2, 8, 2, 11, 21);
    let toks = [1, 2, 3, 4];
    let r = activation_patch(&m, &toks, &toks, 5).unwrap();
    assert!(r.degenerate());
    assert_eq!(r.effects.max_abs(), 0.0);
    assert_eq!(r.metric, PATCH_METRIC);
}

#[test]
fn final_layer_last_position_restores_fully() {
    for seed in 0..5 {
        let m = tiny_model(3, 8, 2, 11, 22 + seed);
        let clean = [1, 2, 3, 4];
        let corrupt = [6, 2, 3, 4];
        let r = activation_patch(&m, &clean, &corrupt, 7).unwrap();
        assert!(!r.degenerate());
        assert!((r.effects.get2(2, 3) - 1.0).abs() < 1e-6);
    }
}

fn assert_patch_oracle(m: &Transformer, clean: &[usize], corrupt: &[usize], s: usize) {
    let r = activation_patch(m, clean, corrupt, s).unwrap();
    let tr = m.trace(clean).unwrap();
    let t = clean.len();
    let lc = *forward(m, clean, None)[t - 1].get(s).unwrap();
    let lx = forward(m, corrupt, None)[t - 1][s];
    for l in 0..m.config.num_layers {
        for p in 0..t {
            let v = tr.layer(l).output.row(p).to_vec();
            let lp = forward(m, corrupt, Some((l, p, &v)))[t - 1][s];
            let expect = (lp - lx) / (lc - lx);
            let got = r.effects.get2(l, p);
            assert!((got - expect).abs() < 1e-8, "l={l} p={p}: {got} vs {expect}");
        }
    }
}

#[test]
fn patch_matrix_matches_patched_forward_oracle() {
    let m = tiny_model(3, 8, 2, 11, 30);
    assert_patch_oracle(&m, &[1, 2, 3, 4, 5], &[9, 2, 3, 4, 5], 6);
    let m = ba_model(3, BackAttentionConfig::finetune(4, 1), 31);
    assert_patch_oracle(&m, &[1, 2, 3, 4], &[8, 2, 3, 4], 0);
}

#[test]
fn patch_rejects_length_mismatch() {
    let m = tiny_model(1, 8, 2, 11, 32);
    assert!(matches!(activation_patch(&m, &[1, 2], &[1], 0), Err(Error::Patch(_))));
}

#[test]
fn corruption_swaps_subject_only() {
    let (vocab, ids, spans) = multi_token_setup();
    for seed in 0..10 {
        let c = corrupt_subject(&vocab, &ids, &spans, seed).unwrap();
        assert_eq!(c.len(), ids.len());
        let diff: Vec<usize> = (0..ids.len()).filter(|&i| ids[i] != c[i]).collect();
        assert_eq!(diff, [1]);
        assert!(vocab.entity_index(c[1]).is_some());
    }
    assert_eq!(corrupt_subject(&vocab, &ids, &spans, 3).unwrap(), corrupt_subject(&vocab, &ids, &spans, 3).unwrap());
}

#[test]
fn logit_difference_matches_definition_and_symmetry() {
    let (vocab, ids, spans) = multi_token_setup();
    let mut m = tiny_model(2, 8, 2, vocab.len(), 33);
    let tr = m.trace(&ids).unwrap();
    let (a, c) = (vocab.entity(1).unwrap(), vocab.entity(3).unwrap());
    let curve = logit_difference_curve(&m, &tr, a, c, &spans, SpanReduce::Last).unwrap();
    assert_eq!(curve.values.shape(), &[2, 6]);
    for l in 0..2 {
        for (j, s) in spans.iter().enumerate() {
            let z = unembed(&m, tr.layer(l).output.row(s.end - 1));
            assert!((curve.values.get2(l, j) - (z[a] - z[c])).abs() < 1e-9);
        }
    }
    let mean = logit_difference_curve(&m, &tr, a, c, &spans, SpanReduce::Mean).unwrap();
    let z0 = unembed(&m, tr.layer(0).output.row(0));
    let z1 = unembed(&m, tr.layer(0).output.row(1));
    assert!((mean.values.get2(0, 0) - ((z0[a] - z0[c]) + (z1[a] - z1[c])) / 2.0).abs() < 1e-9);

    assert!(matches!(
        logit_difference_curve(&m, &tr, a, a, &spans, SpanReduce::Last),
        Err(Error::Contract(_))
    ));
    let row = m.weights.unembed.row(a).to_vec();
    m.weights.unembed.row_mut(c).copy_from_slice(&row);
    let tr = m.trace(&ids).unwrap();
    let flat = logit_difference_curve(&m, &tr, a, c, &spans, SpanReduce::Last).unwrap();
    assert_eq!(flat.values.max_abs(), 0.0);
}

#[test]
fn back_attention_scores_are_distributions() {
    for ba in [BackAttentionConfig::scratch(4), BackAttentionConfig::finetune(4, 1)] {
        let m = ba_model(3, ba, 34);
        let tr = m.trace(&[1, 2, 3, 4, 5]).unwrap();
        let s = extract_back_attention_scores(&tr).unwrap();
        let n = s.target_layers.len();
        assert_eq!(s.scores.shape(), &[5, n * 5]);
        for q in 0..5 {
            assert!((s.scores.row(q).iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert_eq!(s.grid(q).shape(), &[n, 5]);
            let (l, p) = s.peak(q);
            assert!(s.target_layers.contains(&l) && p <= q);
        }
    }
}

#[test]
fn zero_query_projection_gives_uniform_back_attention() {
    let mut m = ba_model(3, BackAttentionConfig::finetune(4, 1), 35);
    let bw = m.weights.back_attention.as_mut().unwrap();
    bw.wq = Tensor::zeros(bw.wq.shape());
    let tr = m.trace(&[1, 2, 3, 4]).unwrap();
    let s = extract_back_attention_scores(&tr).unwrap();
    let n = s.target_layers.len();
    for q in 0..4 {
        let expect = 1.0 / (n * (q + 1)) as f64;
        for b in 0..n {
            for p in 0..4 {
                let v = s.scores.get2(q, b * 4 + p);
                if p <= q {
                    assert!((v - expect).abs() < 1e-12);
                } else {
                    assert_eq!(v, 0.0);
                }
            }
        }
    }
}

#[test]
fn back_attention_scores_absent_without_back_attention() {
    let m = tiny_model(1, 8, 2, 11, 36);
    let tr = m.trace(&[1]).unwrap();
    assert!(matches!(extract_back_attention_scores(&tr), Err(Error::Absent(_))));
}

fn query(vocab: &Vocab, e: [usize; 3], conflict_r2: Option<usize>) -> HopQuery {
    let (prompt, spans) = hop_prompt(vocab, e[0], &[(0, "r1"), (1, "r2")], "e1").unwrap();
    HopQuery {
        kind: HopKind::TwoHop,
        e1: e[0],
        r1: 0,
        e2: e[1],
        r2: 1,
        e3: e[2],
        gold: e[2],
        conflict_r1: Some(e[1]),
        conflict_r2,
        single_hop_conflict: None,
        prompt,
        spans,
    }
}

#[test]
fn classification_covers_all_cases() {
    let vocab = Vocab::new(VocabSpec {
        n_entities: 6,
        n_relations: 2,
        multi_token: false,
    });
    let q = query(&vocab, [0, 1, 2], Some(3));
    let e = |k| vocab.entity(k).unwrap();
    assert_eq!(classify(&q, e(2), &vocab), CaseClass::Correct);
    assert_eq!(classify(&q, e(1), &vocab), CaseClass::Bridge);
    assert_eq!(classify(&q, e(3), &vocab), CaseClass::OtherConflict);
    assert_eq!(classify(&q, e(4), &vocab), CaseClass::Other);
    assert_eq!(classify(&q, 0, &vocab), CaseClass::Other);
}

#[test]
fn model_always_predicting_e3_has_empty_bridge_set() {
    let vocab = Vocab::new(VocabSpec {
        n_entities: 6,
        n_relations: 2,
        multi_token: false,
    });
    let mut m = tiny_model(2, 8, 2, vocab.len(), 37);
    // Only entities get logits, in opposite-sign pairs, so the argmax is
    // always an entity.
    let e = |k| vocab.entity(k).unwrap();
    let rows = randn(&[3, 8], 1.0, &mut rng(1));
    m.weights.unembed = Tensor::zeros(m.weights.unembed.shape());
    for k in 0..3 {
        let r = rows.row(k).to_vec();
        m.weights.unembed.row_mut(e(2 * k)).copy_from_slice(&r);
        let neg: Vec<f64> = r.iter().map(|x| -x).collect();
        m.weights.unembed.row_mut(e(2 * k + 1)).copy_from_slice(&neg);
    }
    // Label each query's gold answer with whatever the model predicts.
    let queries: Vec<HopQuery> = (0..4)
        .map(|e1| {
            let q = query(&vocab, [e1, 0, 0], None);
            let z = m.logits(&q.prompt).unwrap();
            let pred = vocab.entity_index(logitflow::numerics::argmax(z.row(z.rows() - 1))).unwrap();
            query(&vocab, [e1, (pred + 1) % 6, pred], Some((pred + 2) % 6))
        })
        .collect();
    let config = CompareConfig {
        k: Some(5),
        ..CompareConfig::default()
    };
    let report = compare_case_sets(&m, &vocab, &queries, &config).unwrap();
    assert_eq!((report.total, report.correct, report.bridge, report.other_conflict), (4, 4, 0, 0));
    assert_eq!(report.split(), [100.0, 0.0, 0.0]);
    assert!(report.bridge_set.insufficient && report.bridge_set.flow.is_none());
    assert!(!report.correct_set.insufficient);
    assert!(report.correct_set.r1_share.is_some());
    assert_eq!(report.correct_set.patch_effects.as_ref().unwrap().shape(), &[2, 6]);
    assert_eq!(report.r1_gap(), None);
}

#[test]
fn export_tables_and_heatmap_orientation() {
    let m = Tensor::from_rows(&[vec![0.0, 1.0, 2.0], vec![3.0, 4.0, 5.0]]).unwrap();
    let labels: Vec<String> = ["e1", "r1", "last"].iter().map(|s| s.to_string()).collect();
    let ex = MatrixExport {
        kind: "attn",
        matrix: &m,
        labels: &labels,
    };
    let csv = matrices_to_csv(&[ex]).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 1 + 6);
    assert_eq!(lines[0], "matrix,layer,column,label,score");
    assert!(lines[6].starts_with("attn,1,2,last,"));

    let svg = heatmap_svg("t", &ex).unwrap();
    // Largest value is black, smallest white; layer 1 sits to the right.
    let rects: Vec<&str> = svg.lines().filter(|l| l.starts_with("<rect")).collect();
    assert_eq!(rects.len(), 6);
    assert!(rects[0].contains("x=\"90\" y=\"36\"") && rects[0].contains("rgb(255,255,255)"));
    assert!(rects[5].contains("x=\"118\" y=\"92\"") && rects[5].contains("rgb(0,0,0)"));

    let dir = tempfile::tempdir().unwrap();
    write_csv(&dir.path().join("a/flow.csv"), &[ex]).unwrap();
    write_heatmap(&dir.path().join("a/flow.svg"), "t", &ex).unwrap();
    assert!(dir.path().join("a/flow.svg").exists());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn prop_decomposition_is_complete(seed in 0u64..1000, len in 1usize..8) {
        let m = tiny_model(2, 8, 2, 11, seed);
        assert_decomposition(&m, &random_prompt(seed, len, 11));
    }

    #[test]
    fn prop_share_of_total_sums_to_one(vals in prop::collection::vec(0.01f64..10.0, 6)) {
        let t = Tensor::from_rows(&[vals[..3].to_vec(), vals[3..].to_vec()]).unwrap();
        prop_assert!((share_of_total(&t).sum() - 1.0).abs() < 1e-12);
    }
}
