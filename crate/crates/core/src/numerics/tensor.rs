// SPDX-License-Identifier: MIT OR Apache-2.0

//! Dense row-major tensors and the value-level (non-recorded) operations.

use serde::{Deserialize, Serialize};

use super::Scalar;
use crate::error::{Error, Result};

/// Dense row-major array. `data.len()` always equals the product of `shape`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor<S = f64> {
    shape: Vec<usize>,
    data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    pub fn new(shape: Vec<usize>, data: Vec<S>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Dimension {
                op: "tensor",
                lhs: shape,
                rhs: vec![data.len()],
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![S::zero(); shape.iter().product()],
        }
    }

    pub fn full(shape: &[usize], value: S) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn vector(data: Vec<S>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn scalar(value: S) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    /// Builds a matrix from equally long rows.
    pub fn from_rows(rows: &[Vec<S>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
            return Err(Error::Dimension {
                op: "from_rows",
                lhs: vec![rows.len(), cols],
                rhs: vec![bad.len()],
            });
        }
        Ok(Self {
            shape: vec![rows.len(), cols],
            data: rows.iter().flatten().copied().collect(),
        })
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = S::one();
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Number of rows when viewed as a matrix (leading dimension).
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            1 => 1,
            _ => self.shape[0],
        }
    }

    /// Number of columns when viewed as a matrix (product of trailing dims).
    pub fn cols(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            1 => self.shape[0],
            _ => self.shape[1..].iter().product(),
        }
    }

    pub fn row(&self, i: usize) -> &[S] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [S] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn get2(&self, i: usize, j: usize) -> S {
        self.data[i * self.cols() + j]
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::Dimension {
                op: "reshape",
                lhs: self.shape,
                rhs: shape,
            });
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn sum(&self) -> S {
        self.data.iter().copied().sum()
    }

    pub fn max_abs(&self) -> S {
        self.data.iter().fold(S::zero(), |m, &x| m.max(x.abs()))
    }

    /// Converts element precision.
    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|x| T::from_f64(x.to_f64_lossy()).unwrap_or_else(T::nan))
                .collect(),
        }
    }

    fn same_shape(&self, other: &Self, op: &'static str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Dimension {
                op,
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.same_shape(other, "add")?;
        Ok(self.zip(other, |a, b| a + b))
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.same_shape(other, "sub")?;
        Ok(self.zip(other, |a, b| a - b))
    }

    pub fn scale(&self, s: S) -> Self {
        self.map(|x| x * s)
    }

    fn zip(&self, other: &Self, f: impl Fn(S, S) -> S) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.same_shape(other, "add_assign")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
        Ok(())
    }

    pub fn transpose(&self) -> Self {
        let (r, c) = (self.rows(), self.cols());
        let mut out = vec![S::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Self {
            shape: vec![c, r],
            data: out,
        }
    }

    /// Standard matrix product `self × other`.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        matmul_impl(self, false, other, false)
    }

    /// `self × otherᵀ`.
    pub fn matmul_t(&self, other: &Self) -> Result<Self> {
        matmul_impl(self, false, other, true)
    }

    /// `selfᵀ × other`.
    pub fn t_matmul(&self, other: &Self) -> Result<Self> {
        matmul_impl(self, true, other, false)
    }

    /// Numerically stable softmax along `axis`.
    pub fn softmax(&self, axis: usize) -> Result<Self> {
        let (outer, len, inner) = self.axis_split(axis)?;
        let mut out = self.data.clone();
        for o in 0..outer {
            for i in 0..inner {
                let idx = |k: usize| (o * len + k) * inner + i;
                let max = (0..len).fold(S::neg_infinity(), |m, k| m.max(self.data[idx(k)]));
                let mut total = S::zero();
                for k in 0..len {
                    let e = (self.data[idx(k)] - max).exp();
                    out[idx(k)] = e;
                    total = total + e;
                }
                for k in 0..len {
                    out[idx(k)] = out[idx(k)] / total;
                }
            }
        }
        Ok(Self {
            shape: self.shape.clone(),
            data: out,
        })
    }

    fn axis_split(&self, axis: usize) -> Result<(usize, usize, usize)> {
        if axis >= self.shape.len() {
            return Err(Error::Index {
                what: "axis",
                index: axis,
                limit: self.shape.len(),
            });
        }
        let outer = self.shape[..axis].iter().product();
        let inner = self.shape[axis + 1..].iter().product();
        Ok((outer, self.shape[axis], inner))
    }
}

fn matmul_impl<S: Scalar>(a: &Tensor<S>, ta: bool, b: &Tensor<S>, tb: bool) -> Result<Tensor<S>> {
    if a.shape.len() != 2 || b.shape.len() != 2 {
        return Err(Error::Dimension {
            op: "matmul",
            lhs: a.shape.clone(),
            rhs: b.shape.clone(),
        });
    }
    let (m, k) = if ta {
        (a.shape[1], a.shape[0])
    } else {
        (a.shape[0], a.shape[1])
    };
    let (k2, n) = if tb {
        (b.shape[1], b.shape[0])
    } else {
        (b.shape[0], b.shape[1])
    };
    if k != k2 {
        return Err(Error::Dimension {
            op: "matmul",
            lhs: a.shape.clone(),
            rhs: b.shape.clone(),
        });
    }
    let mut out = vec![S::zero(); m * n];
    gemm_into(&a.data, a.shape[1], ta, &b.data, b.shape[1], tb, &mut out, m, k, n, false);
    Ok(Tensor {
        shape: vec![m, n],
        data: out,
    })
}

/// `c (+)= op(a) × op(b)` where `a`, `b`, `c` are row-major with the given
/// stored column counts. `accumulate` selects `beta = 1`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm_into<S: Scalar>(
    a: &[S],
    a_cols: usize,
    ta: bool,
    b: &[S],
    b_cols: usize,
    tb: bool,
    c: &mut [S],
    m: usize,
    k: usize,
    n: usize,
    accumulate: bool,
) {
    assert_eq!(a.len(), m * k, "gemm: lhs buffer");
    assert_eq!(b.len(), k * n, "gemm: rhs buffer");
    assert_eq!(c.len(), m * n, "gemm: output buffer");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c.iter_mut().for_each(|x| *x = S::zero());
        }
        return;
    }
    let (rsa, csa) = if ta { (1, a_cols as isize) } else { (a_cols as isize, 1) };
    let (rsb, csb) = if tb { (1, b_cols as isize) } else { (b_cols as isize, 1) };
    let beta = if accumulate { S::one() } else { S::zero() };
    // SAFETY: buffer lengths are asserted above and the strides address
    // exactly those buffers; `c` is a distinct &mut slice.
    unsafe {
        S::gemm(
            m,
            k,
            n,
            S::one(),
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `log softmax` of one logit row.
pub fn log_softmax<S: Scalar>(logits: &[S]) -> Vec<S> {
    let max = logits.iter().fold(S::neg_infinity(), |m, &x| m.max(x));
    let lse = logits.iter().map(|&x| (x - max).exp()).sum::<S>().ln() + max;
    logits.iter().map(|&x| x - lse).collect()
}

/// `-log softmax(logits)[target]`.
pub fn cross_entropy<S: Scalar>(logits: &Tensor<S>, target: usize) -> Result<S> {
    if target >= logits.len() {
        return Err(Error::Index {
            what: "target class",
            index: target,
            limit: logits.len(),
        });
    }
    Ok(-log_softmax(logits.data())[target])
}

pub fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    a.iter().zip(b).fold(S::zero(), |acc, (&x, &y)| acc + x * y)
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax<S: Scalar>(xs: &[S]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

#[inline]
pub fn silu<S: Scalar>(x: S) -> S {
    x / (S::one() + (-x).exp())
}

#[inline]
pub fn sigmoid<S: Scalar>(x: S) -> S {
    S::one() / (S::one() + (-x).exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &Tensor, b: &Tensor) -> Tensor {
        let (m, k, n) = (a.rows(), a.cols(), b.cols());
        let mut out = Tensor::zeros(&[m, n]);
        for i in 0..m {
            for j in 0..n {
                let mut s = 0.0;
                for p in 0..k {
                    s += a.get2(i, p) * b.get2(p, j);
                }
                out.data_mut()[i * n + j] = s;
            }
        }
        out
    }

    #[test]
    fn matmul_identity_and_zero() {
        let x = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(Tensor::identity(2).matmul(&x).unwrap(), x);
        let z = Tensor::zeros(&[2, 2]);
        assert_eq!(z.matmul(&x).unwrap(), Tensor::zeros(&[2, 2]));
    }

    #[test]
    fn matmul_against_triple_loop() {
        let a = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let b = Tensor::from_rows(&[vec![5.0], vec![6.0]]).unwrap();
        let got = a.matmul(&b).unwrap();
        assert_eq!(got, naive(&a, &b));
        assert_eq!(got.data(), &[17.0, 39.0]);
    }

    #[test]
    fn transposed_products_agree() {
        let a = Tensor::new(vec![3, 4], (0..12).map(|x| x as f64 * 0.3 - 1.0).collect()).unwrap();
        let b = Tensor::new(vec![5, 4], (0..20).map(|x| (x as f64).sin()).collect()).unwrap();
        let want = naive(&a, &b.transpose());
        let got = a.matmul_t(&b).unwrap();
        for (x, y) in got.data().iter().zip(want.data()) {
            assert!((x - y).abs() < 1e-12);
        }
        let got = a.transpose().t_matmul(&b.transpose()).unwrap();
        for (x, y) in got.data().iter().zip(want.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn matmul_shape_mismatch_names_shapes() {
        let a = Tensor::<f64>::zeros(&[2, 3]);
        let b = Tensor::<f64>::zeros(&[2, 3]);
        let err = a.matmul(&b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]"), "{err}");
    }

    #[test]
    fn softmax_cases() {
        let x = Tensor::<f64>::vector(vec![2.5, 2.5, 2.5]);
        for p in x.softmax(0).unwrap().data() {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
        let x = Tensor::vector(vec![0.0, 3f64.ln()]);
        let p = x.softmax(0).unwrap();
        assert!((p.data()[0] - 0.25).abs() < 1e-15);
        assert!((p.data()[1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn softmax_along_leading_axis() {
        let x = Tensor::<f64>::new(vec![2, 3], vec![1.0, 2.0, 3.0, 1.0, 0.0, -1.0]).unwrap();
        let p = x.softmax(0).unwrap();
        for j in 0..3 {
            assert!((p.get2(0, j) + p.get2(1, j) - 1.0).abs() < 1e-12);
        }
        assert!(x.softmax(2).is_err());
    }

    #[test]
    fn cross_entropy_uniform_and_limit() {
        let b = 7;
        let ce = cross_entropy(&Tensor::full(&[b], 0.3), 2).unwrap();
        assert!((ce - (b as f64).ln()).abs() < 1e-12);
        let mut last = f64::INFINITY;
        for big in [0.0, 1.0, 5.0, 20.0, 100.0] {
            let l = cross_entropy(&Tensor::vector(vec![0.0, big, 0.0]), 1).unwrap();
            assert!(l < last);
            last = l;
        }
        assert!(last < 1e-40);
        assert!(cross_entropy(&Tensor::vector(vec![0.0, 1.0]), 2).is_err());
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0, 0.0]), 1);
    }

    proptest::proptest! {
        #[test]
        fn softmax_rows_sum_to_one(xs in proptest::collection::vec(-50.0f64..50.0, 1..40), shift in -100.0f64..100.0) {
            let t = Tensor::vector(xs.clone());
            let p = t.softmax(0).unwrap();
            proptest::prop_assert!((p.sum() - 1.0).abs() < 1e-9);
            proptest::prop_assert!(p.data().iter().all(|&v| v >= 0.0 && v <= 1.0));
            let q = Tensor::vector(xs.iter().map(|x| x + shift).collect()).softmax(0).unwrap();
            for (a, b) in p.data().iter().zip(q.data()) {
                proptest::prop_assert!((a - b).abs() < 1e-9);
            }
        }
    }
}
