//! Dense row-major `f64` matrices and the numeric kernels shared by the
//! autograd tape and the cache-based inference paths.
//!
//! Every kernel computes each output row independently with a fixed
//! accumulation order, so evaluating one row at a time (incremental
//! decoding) reproduces a full-matrix evaluation bit for bit.

use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self { rows, cols, data: vec![value; rows * cols] }
    }

    /// Panics if `data.len() != rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length mismatch");
        Self { rows, cols, data }
    }

    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Self { rows: rows.len(), cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    /// Copies rows `start..start + count`.
    pub fn slice_rows(&self, start: usize, count: usize) -> Matrix {
        Matrix::from_vec(
            count,
            self.cols,
            self.data[start * self.cols..(start + count) * self.cols].to_vec(),
        )
    }

    pub fn push_row(&mut self, row: &[f64]) {
        if self.rows == 0 && self.cols == 0 {
            self.cols = row.len();
        }
        assert_eq!(row.len(), self.cols, "row width mismatch");
        self.data.extend_from_slice(row);
        self.rows += 1;
    }

    pub fn vstack(parts: &[&Matrix]) -> Matrix {
        let cols = parts.first().map_or(0, |m| m.cols);
        let mut out = Matrix::zeros(0, cols);
        for p in parts {
            assert_eq!(p.cols, cols, "vstack width mismatch");
            out.data.extend_from_slice(&p.data);
            out.rows += p.rows;
        }
        out
    }

    pub fn add_assign(&mut self, other: &Matrix) {
        assert_eq!(self.shape(), other.shape(), "add shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
    }

    pub fn scale_assign(&mut self, s: f64) {
        for a in &mut self.data {
            *a *= s;
        }
    }

    pub fn sum_squares(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Frobenius norm of the difference.
    pub fn distance(&self, other: &Matrix) -> f64 {
        assert_eq!(self.shape(), other.shape());
        libm::sqrt(self.data.iter().zip(&other.data).map(|(a, b)| (a - b) * (a - b)).sum())
    }
}

/// `a · b`, accumulating over the shared dimension in ascending order.
pub fn matmul(a: &Matrix, b: &Matrix) -> Matrix {
    assert_eq!(a.cols, b.rows, "matmul shape mismatch {:?} x {:?}", a.shape(), b.shape());
    let mut out = Matrix::zeros(a.rows, b.cols);
    let n = b.cols;
    for i in 0..a.rows {
        let arow = &a.data[i * a.cols..(i + 1) * a.cols];
        let orow = &mut out.data[i * n..(i + 1) * n];
        for (k, &av) in arow.iter().enumerate() {
            let brow = &b.data[k * n..(k + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `aᵀ · b`.
pub fn matmul_at(a: &Matrix, b: &Matrix) -> Matrix {
    assert_eq!(a.rows, b.rows, "matmul_at shape mismatch");
    let mut out = Matrix::zeros(a.cols, b.cols);
    let n = b.cols;
    for r in 0..a.rows {
        let arow = &a.data[r * a.cols..(r + 1) * a.cols];
        let brow = &b.data[r * n..(r + 1) * n];
        for (i, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let orow = &mut out.data[i * n..(i + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `a · bᵀ`.
pub fn matmul_bt(a: &Matrix, b: &Matrix) -> Matrix {
    matmul(a, &b.transpose())
}

/// `x · w + bias` with `bias` a single row.
pub fn linear(x: &Matrix, w: &Matrix, bias: &Matrix) -> Matrix {
    let mut out = matmul(x, w);
    add_row_bias(&mut out, bias);
    out
}

pub fn add_row_bias(x: &mut Matrix, bias: &Matrix) {
    assert_eq!(bias.rows, 1, "bias must be a row");
    assert_eq!(bias.cols, x.cols, "bias width mismatch");
    for r in 0..x.rows {
        for (o, &b) in x.row_mut(r).iter_mut().zip(&bias.data) {
            *o += b;
        }
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Tanh-approximated GELU.
#[inline]
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::tanh(GELU_C * (x + GELU_A * x * x * x)))
}

#[inline]
pub fn gelu_grad(x: f64) -> f64 {
    let inner = GELU_C * (x + GELU_A * x * x * x);
    let t = libm::tanh(inner);
    let dinner = GELU_C * (1.0 + 3.0 * GELU_A * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner
}

pub fn gelu_matrix(x: &Matrix) -> Matrix {
    let mut out = x.clone();
    for v in &mut out.data {
        *v = gelu(*v);
    }
    out
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Row-wise layer normalisation. Returns the output plus per-row
/// `(mean, inverse std)` for the backward pass.
pub fn layer_norm(x: &Matrix, gamma: &Matrix, beta: &Matrix) -> (Matrix, Vec<(f64, f64)>) {
    let d = x.cols;
    assert_eq!(gamma.cols, d);
    assert_eq!(beta.cols, d);
    let mut out = Matrix::zeros(x.rows, d);
    let mut stats = Vec::with_capacity(x.rows);
    for r in 0..x.rows {
        let row = x.row(r);
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let inv = 1.0 / libm::sqrt(var + LAYER_NORM_EPS);
        let orow = out.row_mut(r);
        for c in 0..d {
            orow[c] = (row[c] - mean) * inv * gamma.data[c] + beta.data[c];
        }
        stats.push((mean, inv));
    }
    (out, stats)
}

/// Numerically stable softmax over a slice, in place.
pub fn softmax_in_place(xs: &mut [f64]) {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in xs.iter_mut() {
        *v = libm::exp(*v - max);
        sum += *v;
    }
    for v in xs.iter_mut() {
        *v /= sum;
    }
}

pub fn log_softmax(xs: &[f64]) -> Vec<f64> {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = xs.iter().map(|v| libm::exp(v - max)).sum();
    let lse = max + libm::log(sum);
    xs.iter().map(|v| v - lse).collect()
}

pub fn softmax_rows(x: &Matrix) -> Matrix {
    let mut out = x.clone();
    for r in 0..out.rows {
        softmax_in_place(out.row_mut(r));
    }
    out
}

/// Multi-head scaled dot-product attention over already projected
/// queries, keys and values (all with `d` columns split into `heads`).
///
/// With `causal`, query row `i` sees keys `0..=i + offset`. Returns the
/// concatenated head outputs and, per head, the attention weights
/// (`q_rows × k_rows`, zero outside the visible window).
pub fn attention(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    heads: usize,
    causal: bool,
    offset: usize,
) -> (Matrix, Vec<Matrix>) {
    let d = q.cols;
    assert_eq!(k.cols, d);
    assert_eq!(v.cols, d);
    assert_eq!(k.rows, v.rows);
    assert!(heads > 0 && d.is_multiple_of(heads), "width {d} not divisible by {heads} heads");
    let dh = d / heads;
    let scale = 1.0 / libm::sqrt(dh as f64);
    let mut out = Matrix::zeros(q.rows, d);
    let mut probs = Vec::with_capacity(heads);
    for h in 0..heads {
        let lo = h * dh;
        let mut p = Matrix::zeros(q.rows, k.rows);
        for i in 0..q.rows {
            let visible = if causal { (i + offset + 1).min(k.rows) } else { k.rows };
            let qrow = &q.row(i)[lo..lo + dh];
            let prow = &mut p.row_mut(i)[..visible];
            for (j, s) in prow.iter_mut().enumerate() {
                let krow = &k.row(j)[lo..lo + dh];
                let mut acc = 0.0;
                for (a, b) in qrow.iter().zip(krow) {
                    acc += a * b;
                }
                *s = acc * scale;
            }
            softmax_in_place(prow);
            let orow = &mut out.row_mut(i)[lo..lo + dh];
            for (j, &w) in p.row(i)[..visible].iter().enumerate() {
                let vrow = &v.row(j)[lo..lo + dh];
                for (o, &vv) in orow.iter_mut().zip(vrow) {
                    *o += w * vv;
                }
            }
        }
        probs.push(p);
    }
    (out, probs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_small() {
        let a = Matrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let b = Matrix::from_rows(&[&[5.0, 6.0], &[7.0, 8.0]]);
        assert_eq!(matmul(&a, &b), Matrix::from_rows(&[&[19.0, 22.0], &[43.0, 50.0]]));
        assert_eq!(matmul_at(&a, &b), matmul(&a.transpose(), &b));
        assert_eq!(matmul_bt(&a, &b), matmul(&a, &b.transpose()));
    }

    #[test]
    fn softmax_sums_to_one() {
        let mut xs = [1000.0, 1001.0, -5.0];
        softmax_in_place(&mut xs);
        assert!((xs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let ls = log_softmax(&[1.0, 2.0, 3.0]);
        let total: f64 = ls.iter().map(|v| libm::exp(*v)).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn layer_norm_zero_mean_unit_var() {
        let x = Matrix::from_rows(&[&[1.0, 2.0, 3.0, 4.0]]);
        let (y, _) = layer_norm(&x, &Matrix::filled(1, 4, 1.0), &Matrix::zeros(1, 4));
        let mean: f64 = y.as_slice().iter().sum::<f64>() / 4.0;
        let var: f64 = y.as_slice().iter().map(|v| v * v).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-4);
    }

    #[test]
    fn causal_attention_rows_match_prefix_evaluation() {
        let q = Matrix::from_vec(3, 4, (0..12).map(|i| (i as f64 * 0.37).sin()).collect());
        let k = Matrix::from_vec(3, 4, (0..12).map(|i| (i as f64 * 0.11).cos()).collect());
        let v = Matrix::from_vec(3, 4, (0..12).map(|i| i as f64 * 0.05).collect());
        let (full, _) = attention(&q, &k, &v, 2, true, 0);
        for t in 0..3 {
            let (one, _) = attention(
                &q.slice_rows(t, 1),
                &k.slice_rows(0, t + 1),
                &v.slice_rows(0, t + 1),
                2,
                false,
                0,
            );
            assert_eq!(one.row(0), full.row(t));
        }
    }

    #[test]
    fn gelu_grad_matches_difference() {
        for &x in &[-3.0, -0.5, 0.0, 0.7, 2.5] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8);
        }
    }
}
