// SPDX-License-Identifier: MIT OR Apache-2.0

//! Reverse-mode differentiation over a linear record of primitive operations.
//!
//! Nodes are appended in execution order, so the record is topologically
//! sorted by construction and `backward` is a single reverse sweep. Every
//! primitive variant of [`Op`] has a backward rule in [`Tape::backward`].

use std::sync::Arc;

use super::tensor::{gemm_into, sigmoid, silu, Tensor};
use super::Scalar;
use crate::error::{Error, Result};

/// Handle to a node of a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Value<'w, S> {
    Owned(Tensor<S>),
    Borrowed(&'w Tensor<S>),
}

impl<S> Value<'_, S> {
    fn get(&self) -> &Tensor<S> {
        match self {
            Value::Owned(t) => t,
            Value::Borrowed(t) => t,
        }
    }
}

/// Per-query visibility lists for [`Tape::attention`].
///
/// `allowed[q]` lists the key rows query row `q` may attend to.
#[derive(Debug, Clone)]
pub struct AttentionMask {
    pub allowed: Vec<Vec<u32>>,
    pub num_keys: usize,
}

impl AttentionMask {
    /// Causal mask over concatenated sequences: row `r` of segment `s`
    /// sees rows `s.start..=r`.
    pub fn causal(segments: &[std::ops::Range<usize>]) -> Self {
        let total = segments.last().map_or(0, |s| s.end);
        let mut allowed = vec![Vec::new(); total];
        for seg in segments {
            for r in seg.clone() {
                allowed[r] = (seg.start as u32..=r as u32).collect();
            }
        }
        Self {
            allowed,
            num_keys: total,
        }
    }

    /// Causal mask whose keys are `blocks` stacked copies of the row space
    /// (block `b`, row `r` lives at key index `b * rows + r`). Query `r`
    /// sees every block's rows at positions up to its own.
    pub fn causal_stacked(segments: &[std::ops::Range<usize>], blocks: usize) -> Self {
        let total = segments.last().map_or(0, |s| s.end);
        let mut allowed = vec![Vec::new(); total];
        for seg in segments {
            for r in seg.clone() {
                let mut keys = Vec::with_capacity(blocks * (r - seg.start + 1));
                for b in 0..blocks {
                    keys.extend((seg.start..=r).map(|k| (b * total + k) as u32));
                }
                allowed[r] = keys;
            }
        }
        Self {
            allowed,
            num_keys: total * blocks,
        }
    }
}

struct AttentionSaved<S> {
    q: Var,
    k: Var,
    v: Var,
    heads: usize,
    scale: S,
    mask: Arc<AttentionMask>,
    /// For query `q`: `heads * allowed[q].len()` probabilities starting at `offsets[q]`.
    probs: Vec<S>,
    offsets: Vec<usize>,
}

enum Op<S> {
    Input,
    Param,
    MatMul { a: Var, b: Var, tb: bool },
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, S),
    Silu(Var),
    Relu(Var),
    RmsNorm {
        x: Var,
        gain: Option<Var>,
        inv_rms: Vec<S>,
    },
    Gather { table: Var, ids: Vec<usize> },
    SelectRows { x: Var, rows: Vec<usize> },
    ConcatRows(Vec<Var>),
    Attention(Box<AttentionSaved<S>>),
    CrossEntropy {
        logits: Var,
        targets: Vec<Option<usize>>,
        probs: Vec<S>,
        count: usize,
    },
    Sum(Var),
}

struct Node<'w, S> {
    value: Value<'w, S>,
    op: Op<S>,
    needs_grad: bool,
}

/// Recorded computation: values of every primitive plus enough saved state
/// to run the backward pass.
pub struct Tape<'w, S: Scalar = f64> {
    nodes: Vec<Node<'w, S>>,
    param_nodes: Vec<(usize, Var)>,
}

/// Gradients of a scalar with respect to every registered parameter.
#[derive(Debug, Clone)]
pub struct Gradients<S: Scalar = f64> {
    grads: Vec<Option<Tensor<S>>>,
}

impl<S: Scalar> Gradients<S> {
    /// Gradient of parameter `idx`; parameters the loss did not reach are zero.
    pub fn get(&self, idx: usize) -> Option<&Tensor<S>> {
        self.grads.get(idx).and_then(Option::as_ref)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn into_vec(self) -> Vec<Option<Tensor<S>>> {
        self.grads
    }

    /// Elementwise accumulation of another gradient set.
    pub fn accumulate(&mut self, other: &Gradients<S>) -> Result<()> {
        if self.grads.len() < other.grads.len() {
            self.grads.resize(other.grads.len(), None);
        }
        for (mine, theirs) in self.grads.iter_mut().zip(&other.grads) {
            match (mine.as_mut(), theirs) {
                (Some(m), Some(t)) => m.add_assign(t)?,
                (None, Some(t)) => *mine = Some(t.clone()),
                _ => {}
            }
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.grads.iter().flatten().all(Tensor::is_finite)
    }
}

const RMS_EPS: f64 = 1e-6;

impl<'w, S: Scalar> Default for Tape<'w, S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'w, S: Scalar> Tape<'w, S> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            param_nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        self.nodes[v.0].value.get()
    }

    /// Attention probabilities saved by an attention node, laid out per
    /// query as `heads` consecutive slices over that query's allowed keys.
    pub fn attention_probs(&self, v: Var) -> Option<(&[S], &[usize], &AttentionMask, usize)> {
        match &self.nodes[v.0].op {
            Op::Attention(s) => Some((&s.probs, &s.offsets, &s.mask, s.heads)),
            _ => None,
        }
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Constant input (never differentiated).
    pub fn input(&mut self, t: Tensor<S>) -> Var {
        self.push(t, Op::Input, false)
    }

    /// Parameter leaf borrowed from the caller's weights.
    pub fn param(&mut self, t: &'w Tensor<S>, idx: usize, trainable: bool) -> Var {
        self.nodes.push(Node {
            value: Value::Borrowed(t),
            op: Op::Param,
            needs_grad: trainable,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_nodes.push((idx, v));
        v
    }

    /// `a × b` (or `a × bᵀ` when `transpose_b`).
    pub fn matmul(&mut self, a: Var, b: Var, transpose_b: bool) -> Result<Var> {
        let value = {
            let (av, bv) = (self.value(a), self.value(b));
            if transpose_b {
                av.matmul_t(bv)?
            } else {
                av.matmul(bv)?
            }
        };
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(
            value,
            Op::MatMul {
                a,
                b,
                tb: transpose_b,
            },
            ng,
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(value, Op::Add(a, b), ng))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::Dimension {
                op: "mul",
                lhs: av.shape().to_vec(),
                rhs: bv.shape().to_vec(),
            });
        }
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| x * y).collect();
        let value = Tensor::new(av.shape().to_vec(), data)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(value, Op::Mul(a, b), ng))
    }

    pub fn scale(&mut self, a: Var, s: S) -> Var {
        let value = self.value(a).scale(s);
        let ng = self.ng(a);
        self.push(value, Op::Scale(a, s), ng)
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(silu);
        let ng = self.ng(a);
        self.push(value, Op::Silu(a), ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x.max(S::zero()));
        let ng = self.ng(a);
        self.push(value, Op::Relu(a), ng)
    }

    /// Row-wise RMS normalization, optionally scaled by a learned gain vector.
    pub fn rms_norm(&mut self, x: Var, gain: Option<Var>) -> Result<Var> {
        let xv = self.value(x);
        let (rows, cols) = (xv.rows(), xv.cols());
        if let Some(g) = gain {
            if self.value(g).len() != cols {
                return Err(Error::Dimension {
                    op: "rms_norm",
                    lhs: xv.shape().to_vec(),
                    rhs: self.value(g).shape().to_vec(),
                });
            }
        }
        let mut out = xv.clone();
        let mut inv_rms = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = xv.row(r);
            let ms = row.iter().map(|&v| v * v).sum::<S>() / S::lit(cols as f64);
            let inv = S::one() / (ms + S::lit(RMS_EPS)).sqrt();
            inv_rms.push(inv);
            let o = out.row_mut(r);
            match gain {
                Some(g) => {
                    let gv = self.nodes[g.0].value.get().data();
                    for ((o, &v), &gk) in o.iter_mut().zip(row).zip(gv) {
                        *o = v * inv * gk;
                    }
                }
                None => o.iter_mut().zip(row).for_each(|(o, &v)| *o = v * inv),
            }
        }
        let ng = self.ng(x) || gain.is_some_and(|g| self.ng(g));
        Ok(self.push(out, Op::RmsNorm { x, gain, inv_rms }, ng))
    }

    /// Row lookup `table[ids[i]]`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let tv = self.value(table);
        let n = tv.rows();
        let cols = tv.cols();
        let mut data = Vec::with_capacity(ids.len() * cols);
        for &id in ids {
            if id >= n {
                return Err(Error::Index {
                    what: "embedding row",
                    index: id,
                    limit: n,
                });
            }
            data.extend_from_slice(tv.row(id));
        }
        let value = Tensor::new(vec![ids.len(), cols], data)?;
        let ng = self.ng(table);
        Ok(self.push(
            value,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            ng,
        ))
    }

    pub fn select_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let v = self.gather(x, rows)?;
        if let Op::Gather { table, ids } = std::mem::replace(&mut self.nodes[v.0].op, Op::Input) {
            self.nodes[v.0].op = Op::SelectRows { x: table, rows: ids };
        }
        Ok(v)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = parts.first().map_or(0, |&p| self.value(p).cols());
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let pv = self.value(p);
            if pv.cols() != cols {
                return Err(Error::Dimension {
                    op: "concat_rows",
                    lhs: vec![rows, cols],
                    rhs: pv.shape().to_vec(),
                });
            }
            rows += pv.rows();
            data.extend_from_slice(pv.data());
        }
        let value = Tensor::new(vec![rows, cols], data)?;
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(value, Op::ConcatRows(parts.to_vec()), ng))
    }

    /// Masked multi-head scaled dot-product attention.
    ///
    /// `q` is `nq × heads·dk`, `k` is `nk × heads·dk`, `v` is `nk × heads·dv`;
    /// the result is `nq × heads·dv`. Head `h` uses columns `h·dk..(h+1)·dk`.
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        scale: S,
        mask: Arc<AttentionMask>,
    ) -> Result<Var> {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let nq = qv.rows();
        let nk = kv.rows();
        if heads == 0
            || qv.cols() % heads != 0
            || vv.cols() % heads != 0
            || qv.cols() != kv.cols()
            || vv.rows() != nk
            || mask.allowed.len() != nq
            || mask.num_keys != nk
        {
            return Err(Error::Dimension {
                op: "attention",
                lhs: qv.shape().to_vec(),
                rhs: vec![kv.rows(), kv.cols(), vv.rows(), vv.cols()],
            });
        }
        let dk = qv.cols() / heads;
        let dv = vv.cols() / heads;
        let mut out = Tensor::zeros(&[nq, heads * dv]);
        let mut offsets = Vec::with_capacity(nq);
        let mut probs = Vec::new();
        let mut scores: Vec<S> = Vec::new();
        for (qi, keys) in mask.allowed.iter().enumerate() {
            offsets.push(probs.len());
            let qrow = qv.row(qi);
            for h in 0..heads {
                let qh = &qrow[h * dk..(h + 1) * dk];
                scores.clear();
                let mut max = S::neg_infinity();
                for &kj in keys {
                    let kh = &kv.row(kj as usize)[h * dk..(h + 1) * dk];
                    let s = super::tensor::dot(qh, kh) * scale;
                    max = max.max(s);
                    scores.push(s);
                }
                let mut total = S::zero();
                for s in scores.iter_mut() {
                    *s = (*s - max).exp();
                    total = total + *s;
                }
                let orow = &mut out.row_mut(qi)[h * dv..(h + 1) * dv];
                for (&kj, s) in keys.iter().zip(scores.iter()) {
                    let p = *s / total;
                    probs.push(p);
                    let vh = &vv.row(kj as usize)[h * dv..(h + 1) * dv];
                    for (o, &x) in orow.iter_mut().zip(vh) {
                        *o = *o + p * x;
                    }
                }
            }
        }
        let ng = self.ng(q) || self.ng(k) || self.ng(v);
        Ok(self.push(
            out,
            Op::Attention(Box::new(AttentionSaved {
                q,
                k,
                v,
                heads,
                scale,
                mask,
                probs,
                offsets,
            })),
            ng,
        ))
    }

    /// Mean token cross-entropy over the rows that carry a target.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[Option<usize>]) -> Result<Var> {
        let lv = self.value(logits);
        let (rows, classes) = (lv.rows(), lv.cols());
        if targets.len() != rows {
            return Err(Error::Dimension {
                op: "cross_entropy",
                lhs: lv.shape().to_vec(),
                rhs: vec![targets.len()],
            });
        }
        let mut probs = vec![S::zero(); rows * classes];
        let mut total = S::zero();
        let mut count = 0;
        for (r, t) in targets.iter().enumerate() {
            let Some(t) = *t else { continue };
            if t >= classes {
                return Err(Error::Index {
                    what: "target class",
                    index: t,
                    limit: classes,
                });
            }
            let row = lv.row(r);
            let max = row.iter().fold(S::neg_infinity(), |m, &x| m.max(x));
            let mut z = S::zero();
            for (p, &x) in probs[r * classes..(r + 1) * classes].iter_mut().zip(row) {
                *p = (x - max).exp();
                z = z + *p;
            }
            for p in &mut probs[r * classes..(r + 1) * classes] {
                *p = *p / z;
            }
            total = total + (z.ln() + max - row[t]);
            count += 1;
        }
        let loss = if count == 0 {
            S::zero()
        } else {
            total / S::lit(count as f64)
        };
        let ng = self.ng(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
                count,
            },
            ng,
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        let ng = self.ng(a);
        self.push(value, Op::Sum(a), ng)
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<S>> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let n_params = self.param_nodes.iter().map(|&(i, _)| i + 1).max().unwrap_or(0);
        let mut grads: Vec<Option<Tensor<S>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(S::one()));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            match &node.op {
                Op::Input => {}
                Op::Param => {
                    grads[idx] = Some(g);
                }
                Op::MatMul { a, b, tb } => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let (m, n) = (g.rows(), g.cols());
                    let k = av.cols();
                    if self.ng(*a) {
                        // da = g × op(b)ᵀ
                        let mut da = vec![S::zero(); m * k];
                        gemm_into(g.data(), n, false, bv.data(), bv.cols(), !tb, &mut da, m, n, k, false);
                        accumulate(&mut grads, *a, Tensor::new(av.shape().to_vec(), da)?)?;
                    }
                    if self.ng(*b) {
                        let db = if *tb {
                            // b is n × k: db = gᵀ × a
                            let mut db = vec![S::zero(); n * k];
                            gemm_into(g.data(), n, true, av.data(), k, false, &mut db, n, m, k, false);
                            db
                        } else {
                            // b is k × n: db = aᵀ × g
                            let mut db = vec![S::zero(); k * n];
                            gemm_into(av.data(), k, true, g.data(), n, false, &mut db, k, m, n, false);
                            db
                        };
                        accumulate(&mut grads, *b, Tensor::new(bv.shape().to_vec(), db)?)?;
                    }
                }
                Op::Add(a, b) => {
                    if self.ng(*a) {
                        accumulate(&mut grads, *a, g.clone())?;
                    }
                    if self.ng(*b) {
                        accumulate(&mut grads, *b, g)?;
                    }
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    if self.ng(*a) {
                        let d = g.data().iter().zip(bv.data()).map(|(&x, &y)| x * y).collect();
                        accumulate(&mut grads, *a, Tensor::new(g.shape().to_vec(), d)?)?;
                    }
                    if self.ng(*b) {
                        let d = g.data().iter().zip(av.data()).map(|(&x, &y)| x * y).collect();
                        accumulate(&mut grads, *b, Tensor::new(g.shape().to_vec(), d)?)?;
                    }
                }
                Op::Scale(a, s) => accumulate(&mut grads, *a, g.scale(*s))?,
                Op::Silu(a) => {
                    let av = self.value(*a);
                    let d = g
                        .data()
                        .iter()
                        .zip(av.data())
                        .map(|(&gy, &x)| {
                            let sg = sigmoid(x);
                            gy * sg * (S::one() + x * (S::one() - sg))
                        })
                        .collect();
                    accumulate(&mut grads, *a, Tensor::new(av.shape().to_vec(), d)?)?;
                }
                Op::Relu(a) => {
                    let av = self.value(*a);
                    let d = g
                        .data()
                        .iter()
                        .zip(av.data())
                        .map(|(&gy, &x)| if x > S::zero() { gy } else { S::zero() })
                        .collect();
                    accumulate(&mut grads, *a, Tensor::new(av.shape().to_vec(), d)?)?;
                }
                Op::RmsNorm { x, gain, inv_rms } => {
                    let xv = self.value(*x);
                    let cols = xv.cols();
                    let gv = gain.map(|gn| self.value(gn).data());
                    let mut dx = Tensor::zeros(xv.shape());
                    let mut dgain = vec![S::zero(); cols];
                    for (r, &inv) in inv_rms.iter().enumerate() {
                        let xr = xv.row(r);
                        let gr = g.row(r);
                        // u = gain ⊙ dy
                        let mut dot_ux = S::zero();
                        for c in 0..cols {
                            let u = gv.map_or(gr[c], |gv| gr[c] * gv[c]);
                            dot_ux = dot_ux + u * xr[c];
                            dgain[c] = dgain[c] + gr[c] * xr[c] * inv;
                        }
                        let coef = inv * inv * inv * dot_ux / S::lit(cols as f64);
                        let dr = dx.row_mut(r);
                        for c in 0..cols {
                            let u = gv.map_or(gr[c], |gv| gr[c] * gv[c]);
                            dr[c] = u * inv - xr[c] * coef;
                        }
                    }
                    if self.ng(*x) {
                        accumulate(&mut grads, *x, dx)?;
                    }
                    if let Some(gn) = gain {
                        if self.ng(*gn) {
                            let shape = self.value(*gn).shape().to_vec();
                            accumulate(&mut grads, *gn, Tensor::new(shape, dgain)?)?;
                        }
                    }
                }
                Op::Gather { table, ids } | Op::SelectRows { x: table, rows: ids } => {
                    let tv = self.value(*table);
                    let mut dt = Tensor::zeros(tv.shape());
                    for (r, &id) in ids.iter().enumerate() {
                        for (d, &x) in dt.row_mut(id).iter_mut().zip(g.row(r)) {
                            *d = *d + x;
                        }
                    }
                    accumulate(&mut grads, *table, dt)?;
                }
                Op::ConcatRows(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let pv = self.value(p);
                        let len = pv.len();
                        if self.ng(p) {
                            let d = g.data()[start..start + len].to_vec();
                            accumulate(&mut grads, p, Tensor::new(pv.shape().to_vec(), d)?)?;
                        }
                        start += len;
                    }
                }
                Op::Attention(saved) => self.attention_backward(saved, &g, &mut grads)?,
                Op::CrossEntropy {
                    logits,
                    targets,
                    probs,
                    count,
                } => {
                    let lv = self.value(*logits);
                    let classes = lv.cols();
                    let mut d = Tensor::zeros(lv.shape());
                    if *count > 0 {
                        let w = g.data()[0] / S::lit(*count as f64);
                        for (r, t) in targets.iter().enumerate() {
                            let Some(t) = *t else { continue };
                            let dr = d.row_mut(r);
                            for (c, x) in dr.iter_mut().enumerate() {
                                let p = probs[r * classes + c];
                                *x = w * if c == t { p - S::one() } else { p };
                            }
                        }
                    }
                    accumulate(&mut grads, *logits, d)?;
                }
                Op::Sum(a) => {
                    let shape = self.value(*a).shape().to_vec();
                    accumulate(&mut grads, *a, Tensor::full(&shape, g.data()[0]))?;
                }
            }
        }

        let mut out: Vec<Option<Tensor<S>>> = vec![None; n_params];
        for &(pidx, var) in &self.param_nodes {
            let g = grads
                .get_mut(var.0)
                .and_then(Option::take)
                .unwrap_or_else(|| Tensor::zeros(self.value(var).shape()));
            match &mut out[pidx] {
                Some(existing) => existing.add_assign(&g)?,
                slot => *slot = Some(g),
            }
        }
        Ok(Gradients { grads: out })
    }

    fn attention_backward(
        &self,
        s: &AttentionSaved<S>,
        g: &Tensor<S>,
        grads: &mut [Option<Tensor<S>>],
    ) -> Result<()> {
        let (qv, kv, vv) = (self.value(s.q), self.value(s.k), self.value(s.v));
        let heads = s.heads;
        let dk = qv.cols() / heads;
        let dv = vv.cols() / heads;
        let mut dq = Tensor::zeros(qv.shape());
        let mut dkt = Tensor::zeros(kv.shape());
        let mut dvt = Tensor::zeros(vv.shape());
        let mut dp: Vec<S> = Vec::new();
        for (qi, keys) in s.mask.allowed.iter().enumerate() {
            let n = keys.len();
            let grow = g.row(qi);
            for h in 0..heads {
                let base = s.offsets[qi] + h * n;
                let p = &s.probs[base..base + n];
                let gh = &grow[h * dv..(h + 1) * dv];
                dp.clear();
                let mut weighted = S::zero();
                for (j, &kj) in keys.iter().enumerate() {
                    let vh = &vv.row(kj as usize)[h * dv..(h + 1) * dv];
                    let d = super::tensor::dot(gh, vh);
                    weighted = weighted + p[j] * d;
                    dp.push(d);
                    let dvr = &mut dvt.row_mut(kj as usize)[h * dv..(h + 1) * dv];
                    for (o, &x) in dvr.iter_mut().zip(gh) {
                        *o = *o + p[j] * x;
                    }
                }
                let qh: Vec<S> = qv.row(qi)[h * dk..(h + 1) * dk].to_vec();
                for (j, &kj) in keys.iter().enumerate() {
                    let ds = p[j] * (dp[j] - weighted) * s.scale;
                    if ds == S::zero() {
                        continue;
                    }
                    let kh = &kv.row(kj as usize)[h * dk..(h + 1) * dk];
                    let dqr = &mut dq.row_mut(qi)[h * dk..(h + 1) * dk];
                    for (o, &x) in dqr.iter_mut().zip(kh) {
                        *o = *o + ds * x;
                    }
                    let dkr = &mut dkt.row_mut(kj as usize)[h * dk..(h + 1) * dk];
                    for (o, &x) in dkr.iter_mut().zip(&qh) {
                        *o = *o + ds * x;
                    }
                }
            }
        }
        if self.ng(s.q) {
            accumulate(grads, s.q, dq)?;
        }
        if self.ng(s.k) {
            accumulate(grads, s.k, dkt)?;
        }
        if self.ng(s.v) {
            accumulate(grads, s.v, dvt)?;
        }
        Ok(())
    }
}

fn accumulate<S: Scalar>(grads: &mut [Option<Tensor<S>>], v: Var, g: Tensor<S>) -> Result<()> {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot => {
            *slot = Some(g);
            Ok(())
        }
    }
}
