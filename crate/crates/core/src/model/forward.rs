// SPDX-License-Identifier: MIT OR Apache-2.0

//! Forward computation recorded on a [`Tape`], shared by training (batched,
//! differentiable) and analysis (single prompt, full trace).

use std::ops::Range;
use std::sync::Arc;

use super::config::{Activation, BackAttentionConfig, ModelConfig};
use super::trace::{BackAttentionTrace, ForwardTrace, LayerTrace};
use super::weights::TransformerWeights;
use crate::error::{Error, Result};
use crate::numerics::{argmax, AttentionMask, Scalar, Tape, Tensor, Var};

/// A decoder-only transformer, optionally with back attention.
#[derive(Debug, Clone, PartialEq)]
pub struct Transformer<S: Scalar = f64> {
    pub config: ModelConfig,
    pub back_attention: Option<BackAttentionConfig>,
    pub weights: TransformerWeights<S>,
}

/// Several token sequences packed row-wise; sequences never attend to each other.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub tokens: Vec<usize>,
    pub segments: Vec<Range<usize>>,
}

impl Batch {
    pub fn new<T: AsRef<[usize]>>(seqs: &[T]) -> Self {
        let mut tokens = Vec::new();
        let mut segments = Vec::with_capacity(seqs.len());
        for s in seqs {
            let start = tokens.len();
            tokens.extend_from_slice(s.as_ref());
            segments.push(start..tokens.len());
        }
        Self { tokens, segments }
    }

    pub fn single(tokens: &[usize]) -> Self {
        Self::new(&[tokens])
    }

    /// Position of every row inside its own sequence.
    pub fn positions(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.tokens.len());
        for s in &self.segments {
            out.extend(0..s.len());
        }
        out
    }
}

/// Overwrites one row of one layer's output in the final pass.
#[derive(Debug, Clone)]
pub struct Intervention<S: Scalar = f64> {
    pub layer: usize,
    pub row: usize,
    pub value: Vec<S>,
}

pub(crate) struct LayerVars {
    attn_norm: Option<Var>,
    wq: Var,
    wk: Var,
    wv: Var,
    wo: Var,
    ffn_norm: Option<Var>,
    fc1: Var,
    fc2: Var,
}

pub(crate) struct BackVars {
    wq: Var,
    wk: Var,
    wv: Var,
    wo: Var,
}

/// Tape leaves for every weight, registered in [`TransformerWeights::named`] order.
pub(crate) struct ModelVars {
    embed: Var,
    unembed: Var,
    pos: Var,
    layers: Vec<LayerVars>,
    final_norm: Option<Var>,
    back: Option<BackVars>,
}

impl ModelVars {
    pub(crate) fn register<'w, S: Scalar>(
        tape: &mut Tape<'w, S>,
        w: &'w TransformerWeights<S>,
        trainable: &dyn Fn(usize) -> bool,
    ) -> Self {
        let mut idx = 0;
        let mut p = |tape: &mut Tape<'w, S>, t: &'w Tensor<S>| {
            let v = tape.param(t, idx, trainable(idx));
            idx += 1;
            v
        };
        let embed = p(tape, &w.embed);
        let unembed = p(tape, &w.unembed);
        let pos = p(tape, &w.pos_embed);
        let mut layers = Vec::with_capacity(w.layers.len());
        for lw in &w.layers {
            let attn_norm = lw.attn_norm.as_ref().map(|g| p(tape, g));
            let wq = p(tape, &lw.wq);
            let wk = p(tape, &lw.wk);
            let wv = p(tape, &lw.wv);
            let wo = p(tape, &lw.wo);
            let ffn_norm = lw.ffn_norm.as_ref().map(|g| p(tape, g));
            let fc1 = p(tape, &lw.fc1);
            let fc2 = p(tape, &lw.fc2);
            layers.push(LayerVars {
                attn_norm,
                wq,
                wk,
                wv,
                wo,
                ffn_norm,
                fc1,
                fc2,
            });
        }
        let final_norm = w.final_norm.as_ref().map(|g| p(tape, g));
        let back = w.back_attention.as_ref().map(|b| BackVars {
            wq: p(tape, &b.wq),
            wk: p(tape, &b.wk),
            wv: p(tape, &b.wv),
            wo: p(tape, &b.wo),
        });
        Self {
            embed,
            unembed,
            pos,
            layers,
            final_norm,
            back,
        }
    }
}

/// Tape nodes of one layer application.
#[derive(Debug, Clone, Copy)]
pub(crate) struct LayerNodes {
    pub input: Var,
    pub attn_input: Var,
    pub attn: Var,
    pub attn_out: Var,
    pub ffn_input: Var,
    pub coefficients: Var,
    pub ffn_out: Var,
    pub output: Var,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct BackNodes {
    pub source: Var,
    pub attn: Var,
    pub output: Var,
}

pub(crate) struct ForwardNodes {
    pub embeddings: Var,
    pub pass1: Vec<LayerNodes>,
    pub back: Option<BackNodes>,
    pub pass2: Vec<LayerNodes>,
    pub logits: Var,
}

impl<S: Scalar> Transformer<S> {
    /// Seeded initialization.
    pub fn new(config: ModelConfig, back_attention: Option<BackAttentionConfig>) -> Result<Self> {
        let weights = TransformerWeights::init(&config, back_attention.as_ref())?;
        Ok(Self {
            config,
            back_attention,
            weights,
        })
    }

    pub fn cast<T: Scalar>(&self) -> Transformer<T> {
        Transformer {
            config: self.config.clone(),
            back_attention: self.back_attention.clone(),
            weights: self.weights.cast(),
        }
    }

    /// Adds freshly initialized back attention to a model (weights of the
    /// base are untouched).
    pub fn with_back_attention(mut self, ba: BackAttentionConfig, seed: u64) -> Result<Self> {
        ba.validate(self.config.num_layers)?;
        self.weights.back_attention = Some(super::weights::BackAttentionWeights::init(
            self.config.model_dim,
            &ba,
            seed,
        ));
        self.back_attention = Some(ba);
        Ok(self)
    }

    /// Drops back attention, returning the base model.
    pub fn without_back_attention(mut self) -> Self {
        self.back_attention = None;
        self.weights.back_attention = None;
        self
    }

    pub fn validate_tokens(&self, tokens: &[usize]) -> Result<()> {
        if let Some(&bad) = tokens.iter().find(|&&t| t >= self.config.vocab_size) {
            return Err(Error::Vocab(format!(
                "token id {bad} outside vocabulary of size {}",
                self.config.vocab_size
            )));
        }
        Ok(())
    }

    fn check_batch(&self, batch: &Batch) -> Result<()> {
        self.validate_tokens(&batch.tokens)?;
        if let Some(s) = batch.segments.iter().find(|s| s.len() > self.config.max_positions) {
            return Err(Error::Index {
                what: "sequence length",
                index: s.len(),
                limit: self.config.max_positions,
            });
        }
        Ok(())
    }

    /// Records the forward pass of `batch`. `trainable(i)` selects which
    /// parameters (by [`TransformerWeights::named`] index) receive gradients.
    pub(crate) fn record<'w>(
        &'w self,
        tape: &mut Tape<'w, S>,
        batch: &Batch,
        trainable: &dyn Fn(usize) -> bool,
        intervention: Option<&Intervention<S>>,
    ) -> Result<ForwardNodes> {
        self.check_batch(batch)?;
        let vars = ModelVars::register(tape, &self.weights, trainable);
        let positions = batch.positions();
        let tok = tape.gather(vars.embed, &batch.tokens)?;
        let pos = tape.gather(vars.pos, &positions)?;
        let embeddings = tape.add(tok, pos)?;
        let mask = Arc::new(AttentionMask::causal(&batch.segments));

        let source = self.back_attention.as_ref().map(|b| b.source_layer);
        let mut h = embeddings;
        let mut pass1 = Vec::with_capacity(self.config.num_layers);
        for (l, lv) in vars.layers.iter().enumerate() {
            let iv = intervention.filter(|iv| iv.layer == l && source.is_none_or(|s| l < s));
            let nodes = self.record_layer(tape, lv, h, &mask, iv)?;
            h = nodes.output;
            pass1.push(nodes);
        }

        let mut back = None;
        let mut pass2 = Vec::new();
        if let (Some(ba), Some(bv)) = (&self.back_attention, &vars.back) {
            let s = ba.source_layer;
            let targets = ba.target_layers(self.config.num_layers);
            let hs = pass1[s].input;
            let outs: Vec<Var> = targets.clone().map(|t| pass1[t].output).collect();
            let ht = tape.concat_rows(&outs)?;
            let (hs_n, ht_n) = if self.config.normalize {
                (tape.rms_norm(hs, None)?, tape.rms_norm(ht, None)?)
            } else {
                (hs, ht)
            };
            let q = tape.matmul(hs_n, bv.wq, false)?;
            let k = tape.matmul(ht_n, bv.wk, false)?;
            let v = tape.matmul(ht_n, bv.wv, false)?;
            let stacked = Arc::new(AttentionMask::causal_stacked(&batch.segments, targets.len()));
            let scale = S::one() / S::lit(ba.back_dim as f64).sqrt();
            let attn = tape.attention(q, k, v, 1, scale, stacked)?;
            let out = tape.matmul(attn, bv.wo, false)?;
            h = tape.add(hs, out)?;
            back = Some(BackNodes {
                source: hs,
                attn,
                output: out,
            });
            for l in s..self.config.num_layers {
                let iv = intervention.filter(|iv| iv.layer == l);
                let nodes = self.record_layer(tape, &vars.layers[l], h, &mask, iv)?;
                h = nodes.output;
                pass2.push(nodes);
            }
        }

        let z = match vars.final_norm {
            Some(g) => tape.rms_norm(h, Some(g))?,
            None => h,
        };
        let logits = tape.matmul(z, vars.unembed, true)?;
        Ok(ForwardNodes {
            embeddings,
            pass1,
            back,
            pass2,
            logits,
        })
    }

    fn record_layer<'w>(
        &'w self,
        tape: &mut Tape<'w, S>,
        lv: &LayerVars,
        x: Var,
        mask: &Arc<AttentionMask>,
        intervention: Option<&Intervention<S>>,
    ) -> Result<LayerNodes> {
        let attn_input = match lv.attn_norm {
            Some(g) => tape.rms_norm(x, Some(g))?,
            None => x,
        };
        let q = tape.matmul(attn_input, lv.wq, true)?;
        let k = tape.matmul(attn_input, lv.wk, true)?;
        let v = tape.matmul(attn_input, lv.wv, true)?;
        let scale = S::one() / S::lit(self.config.head_dim() as f64).sqrt();
        let attn = tape.attention(q, k, v, self.config.num_heads, scale, mask.clone())?;
        let attn_out = tape.matmul(attn, lv.wo, true)?;
        let resid = tape.add(x, attn_out)?;
        let ffn_input = match lv.ffn_norm {
            Some(g) => tape.rms_norm(resid, Some(g))?,
            None => resid,
        };
        let pre = tape.matmul(ffn_input, lv.fc1, true)?;
        let coefficients = match self.config.activation {
            Activation::Silu => tape.silu(pre),
            Activation::Relu => tape.relu(pre),
        };
        let ffn_out = tape.matmul(coefficients, lv.fc2, true)?;
        let mut output = tape.add(resid, ffn_out)?;
        if let Some(iv) = intervention {
            let mut patched = tape.value(output).clone();
            if iv.row >= patched.rows() || iv.value.len() != patched.cols() {
                return Err(Error::Patch(format!(
                    "intervention row {} / width {} does not fit states {:?}",
                    iv.row,
                    iv.value.len(),
                    patched.shape()
                )));
            }
            patched.row_mut(iv.row).copy_from_slice(&iv.value);
            output = tape.input(patched);
        }
        Ok(LayerNodes {
            input: x,
            attn_input,
            attn,
            attn_out,
            ffn_input,
            coefficients,
            ffn_out,
            output,
        })
    }

    /// Next-token logits (`rows × B`) for every row of `batch`.
    pub fn logits_batch(&self, batch: &Batch) -> Result<Tensor<S>> {
        let mut tape = Tape::new();
        let nodes = self.record(&mut tape, batch, &|_| false, None)?;
        Ok(tape.value(nodes.logits).clone())
    }

    /// Next-token logits (`T × B`) of one prompt.
    pub fn logits(&self, tokens: &[usize]) -> Result<Tensor<S>> {
        self.logits_batch(&Batch::single(tokens))
    }

    /// Logits with one layer-output row overwritten.
    pub fn logits_with(&self, tokens: &[usize], intervention: &Intervention<S>) -> Result<Tensor<S>> {
        let mut tape = Tape::new();
        let nodes = self.record(&mut tape, &Batch::single(tokens), &|_| false, Some(intervention))?;
        Ok(tape.value(nodes.logits).clone())
    }

    /// Full record of one forward pass, converted to `f64`.
    pub fn trace(&self, tokens: &[usize]) -> Result<ForwardTrace> {
        let mut tape = Tape::new();
        let batch = Batch::single(tokens);
        let nodes = self.record(&mut tape, &batch, &|_| false, None)?;
        let t = tokens.len();
        let layer = |n: &LayerNodes| -> LayerTrace {
            let v = |x: Var| tape.value(x).cast::<f64>();
            LayerTrace {
                input: v(n.input),
                attn_input: v(n.attn_input),
                attn_out: v(n.attn_out),
                attn_scores: head_scores(&tape, n.attn, t, t),
                ffn_input: v(n.ffn_input),
                coefficients: v(n.coefficients),
                ffn_out: v(n.ffn_out),
                output: v(n.output),
            }
        };
        let back_attention = match (&self.back_attention, nodes.back) {
            (Some(ba), Some(b)) => {
                let targets = ba.target_layers(self.config.num_layers);
                let mut scores = head_scores(&tape, b.attn, t, t * targets.len());
                Some(BackAttentionTrace {
                    source_layer: ba.source_layer,
                    target_layers: targets,
                    mode: ba.mode,
                    source_states: tape.value(b.source).cast(),
                    scores: scores.pop().expect("single head"),
                    output: tape.value(b.output).cast(),
                })
            }
            _ => None,
        };
        let logits = tape.value(nodes.logits).cast::<f64>();
        Ok(ForwardTrace::new(
            tokens.to_vec(),
            tape.value(nodes.embeddings).cast(),
            nodes.pass1.iter().map(layer).collect(),
            back_attention,
            nodes.pass2.iter().map(layer).collect(),
            logits,
        ))
    }

    /// Greedy decoding; every step reruns the complete (two-pass, when back
    /// attention is present) inference on the current prefix. Stops after
    /// emitting `stop` or `max_new_tokens` tokens.
    pub fn generate_greedy(&self, prompt: &[usize], max_new_tokens: usize, stop: Option<usize>) -> Result<Vec<usize>> {
        if prompt.is_empty() {
            return Err(Error::Contract("greedy decoding needs a non-empty prompt".into()));
        }
        let mut seq = prompt.to_vec();
        for _ in 0..max_new_tokens {
            if seq.len() >= self.config.max_positions {
                break;
            }
            let logits = self.logits(&seq)?;
            let next = argmax(logits.row(seq.len() - 1));
            seq.push(next);
            if Some(next) == stop {
                break;
            }
        }
        Ok(seq)
    }
}

/// Dense per-head `queries × keys` score matrices of an attention node.
fn head_scores<S: Scalar>(tape: &Tape<'_, S>, attn: Var, nq: usize, nk: usize) -> Vec<Tensor> {
    let (probs, offsets, mask, heads) = tape.attention_probs(attn).expect("attention node");
    let mut out = vec![Tensor::zeros(&[nq, nk]); heads];
    for (qi, keys) in mask.allowed.iter().enumerate() {
        let n = keys.len();
        for (h, m) in out.iter_mut().enumerate() {
            let base = offsets[qi] + h * n;
            for (j, &k) in keys.iter().enumerate() {
                m.data_mut()[qi * nk + k as usize] = probs[base + j].to_f64_lossy();
            }
        }
    }
    out
}
