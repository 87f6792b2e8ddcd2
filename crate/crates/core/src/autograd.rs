//! Reverse-mode automatic differentiation over [`Matrix`] values.
//!
//! A [`Tape`] records one forward evaluation. Parameters enter the tape
//! by reference (no copies); [`Tape::backward`] accumulates parameter
//! gradients into a caller-owned buffer indexed like the [`ParamStore`].

use alloc::borrow::Cow;
use alloc::vec;
use alloc::vec::Vec;

use crate::loss::{alignment_loss_with_grad, AlignLossKind, TransReduction};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{self, gelu_grad, log_softmax, Matrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Gelu(Var),
    Transpose(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, stats: Vec<(f64, f64)> },
    Attention { q: Var, k: Var, v: Var, heads: usize, probs: Vec<Matrix> },
    Gather { table: Var, ids: Vec<u32> },
    SliceRows { x: Var, start: usize },
    ConcatRows(Vec<Var>),
    CrossEntropy { logits: Var, targets: Vec<u32>, scale: f64 },
    AlignLoss { student: Var, grad: Matrix },
}

struct Node<'a> {
    value: Cow<'a, Matrix>,
    op: Op,
}

pub struct Tape<'a> {
    params: &'a ParamStore,
    nodes: Vec<Node<'a>>,
    param_vars: Vec<Option<Var>>,
}

impl<'a> Tape<'a> {
    pub fn new(params: &'a ParamStore) -> Self {
        Self { params, nodes: Vec::new(), param_vars: vec![None; params.len()] }
    }

    fn push(&mut self, value: Cow<'a, Matrix>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v).get(0, 0)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A constant input (no gradient).
    pub fn input(&mut self, m: Matrix) -> Var {
        self.push(Cow::Owned(m), Op::Input)
    }

    pub fn input_ref(&mut self, m: &'a Matrix) -> Var {
        self.push(Cow::Borrowed(m), Op::Input)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.index()] {
            return v;
        }
        let v = self.push(Cow::Borrowed(self.params.get(id)), Op::Param(id));
        self.param_vars[id.index()] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = tensor::matmul(self.value(a), self.value(b));
        self.push(Cow::Owned(out), Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        self.push(Cow::Owned(out), Op::Add(a, b))
    }

    pub fn add_row(&mut self, x: Var, bias: Var) -> Var {
        let mut out = self.value(x).clone();
        tensor::add_row_bias(&mut out, self.value(bias));
        self.push(Cow::Owned(out), Op::AddRow(x, bias))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let mut out = self.value(x).clone();
        out.scale_assign(s);
        self.push(Cow::Owned(out), Op::Scale(x, s))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let out = tensor::gelu_matrix(self.value(x));
        self.push(Cow::Owned(out), Op::Gelu(x))
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let out = self.value(x).transpose();
        self.push(Cow::Owned(out), Op::Transpose(x))
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let (out, stats) = tensor::layer_norm(self.value(x), self.value(gamma), self.value(beta));
        self.push(Cow::Owned(out), Op::LayerNorm { x, gamma, beta, stats })
    }

    /// Multi-head attention over projected `q`, `k`, `v`; `causal` masks
    /// keys after each query position.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize, causal: bool) -> Var {
        let (out, probs) = tensor::attention(self.value(q), self.value(k), self.value(v), heads, causal, 0);
        self.push(Cow::Owned(out), Op::Attention { q, k, v, heads, probs })
    }

    /// Rows of `table` selected by `ids` (embedding lookup).
    pub fn gather(&mut self, table: Var, ids: &[u32]) -> Var {
        let t = self.value(table);
        let mut out = Matrix::zeros(ids.len(), t.cols());
        for (r, &id) in ids.iter().enumerate() {
            out.row_mut(r).copy_from_slice(t.row(id as usize));
        }
        self.push(Cow::Owned(out), Op::Gather { table, ids: ids.to_vec() })
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, count: usize) -> Var {
        let out = self.value(x).slice_rows(start, count);
        self.push(Cow::Owned(out), Op::SliceRows { x, start })
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let mats: Vec<&Matrix> = parts.iter().map(|p| self.value(*p)).collect();
        let out = Matrix::vstack(&mats);
        self.push(Cow::Owned(out), Op::ConcatRows(parts.to_vec()))
    }

    /// Cross-entropy of row-wise softmax(logits) against `targets`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[u32], reduction: TransReduction) -> Var {
        let l = self.value(logits);
        assert_eq!(l.rows(), targets.len(), "one target per logits row");
        let mut total = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            let lp = log_softmax(l.row(r));
            total -= lp[t as usize];
        }
        let scale = match reduction {
            TransReduction::TokenMean => 1.0 / targets.len().max(1) as f64,
            TransReduction::Sum => 1.0,
        };
        let out = Matrix::filled(1, 1, total * scale);
        self.push(Cow::Owned(out), Op::CrossEntropy { logits, targets: targets.to_vec(), scale })
    }

    /// Alignment loss of `student` against a constant `teacher` target.
    pub fn align_loss(&mut self, teacher: &Matrix, student: Var, kind: AlignLossKind) -> Result<Var, crate::Error> {
        let (loss, grad) = alignment_loss_with_grad(teacher, self.value(student), kind)?;
        Ok(self.push(Cow::Owned(Matrix::filled(1, 1, loss)), Op::AlignLoss { student, grad }))
    }

    /// Back-propagates from scalar nodes, each weighted by its seed, and
    /// adds parameter gradients into `grads` (indexed by parameter id).
    pub fn backward(&self, seeds: &[(Var, f64)], grads: &mut [Matrix]) {
        assert_eq!(grads.len(), self.params.len(), "gradient buffer size");
        let mut adj: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        for &(v, w) in seeds {
            accumulate(&mut adj, v, Matrix::filled(1, 1, w));
        }
        for idx in (0..self.nodes.len()).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Input => {}
                Op::Param(id) => grads[id.index()].add_assign(&g),
                Op::MatMul(a, b) => {
                    if self.needs_grad(*a) {
                        accumulate(&mut adj, *a, tensor::matmul_bt(&g, self.value(*b)));
                    }
                    if self.needs_grad(*b) {
                        accumulate(&mut adj, *b, tensor::matmul_at(self.value(*a), &g));
                    }
                }
                Op::Add(a, b) => {
                    accumulate(&mut adj, *a, g.clone());
                    accumulate(&mut adj, *b, g);
                }
                Op::AddRow(x, bias) => {
                    let mut gb = Matrix::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (o, v) in gb.as_mut_slice().iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                    accumulate(&mut adj, *bias, gb);
                    accumulate(&mut adj, *x, g);
                }
                Op::Scale(x, s) => {
                    let mut gx = g;
                    gx.scale_assign(*s);
                    accumulate(&mut adj, *x, gx);
                }
                Op::Gelu(x) => {
                    let mut gx = g;
                    for (o, xv) in gx.as_mut_slice().iter_mut().zip(self.value(*x).as_slice()) {
                        *o *= gelu_grad(*xv);
                    }
                    accumulate(&mut adj, *x, gx);
                }
                Op::Transpose(x) => accumulate(&mut adj, *x, g.transpose()),
                Op::LayerNorm { x, gamma, beta, stats } => {
                    self.layer_norm_backward(&mut adj, &g, *x, *gamma, *beta, stats);
                }
                Op::Attention { q, k, v, heads, probs } => {
                    self.attention_backward(&mut adj, &g, *q, *k, *v, *heads, probs);
                }
                Op::Gather { table, ids } => {
                    if self.needs_grad(*table) {
                        let t = self.value(*table);
                        let mut gt = Matrix::zeros(t.rows(), t.cols());
                        for (r, &id) in ids.iter().enumerate() {
                            for (o, v) in gt.row_mut(id as usize).iter_mut().zip(g.row(r)) {
                                *o += v;
                            }
                        }
                        accumulate(&mut adj, *table, gt);
                    }
                }
                Op::SliceRows { x, start } => {
                    if self.needs_grad(*x) {
                        let src = self.value(*x);
                        let mut gx = Matrix::zeros(src.rows(), src.cols());
                        for r in 0..g.rows() {
                            gx.row_mut(start + r).copy_from_slice(g.row(r));
                        }
                        accumulate(&mut adj, *x, gx);
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let rows = self.value(*p).rows();
                        accumulate(&mut adj, *p, g.slice_rows(offset, rows));
                        offset += rows;
                    }
                }
                Op::CrossEntropy { logits, targets, scale } => {
                    let seed = g.get(0, 0) * scale;
                    let l = self.value(*logits);
                    let mut gl = Matrix::zeros(l.rows(), l.cols());
                    for (r, &t) in targets.iter().enumerate() {
                        let lp = log_softmax(l.row(r));
                        let row = gl.row_mut(r);
                        for (o, v) in row.iter_mut().zip(&lp) {
                            *o = libm::exp(*v) * seed;
                        }
                        row[t as usize] -= seed;
                    }
                    accumulate(&mut adj, *logits, gl);
                }
                Op::AlignLoss { student, grad } => {
                    let mut gs = grad.clone();
                    gs.scale_assign(g.get(0, 0));
                    accumulate(&mut adj, *student, gs);
                }
            }
        }
    }

    fn needs_grad(&self, v: Var) -> bool {
        !matches!(self.nodes[v.0].op, Op::Input)
    }

    fn layer_norm_backward(
        &self,
        adj: &mut [Option<Matrix>],
        g: &Matrix,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: &[(f64, f64)],
    ) {
        let xv = self.value(x);
        let gam = self.value(gamma);
        let d = xv.cols();
        let mut gx = Matrix::zeros(xv.rows(), d);
        let mut gg = Matrix::zeros(1, d);
        let mut gbeta = Matrix::zeros(1, d);
        let mut xhat = vec![0.0; d];
        let mut dxhat = vec![0.0; d];
        for r in 0..xv.rows() {
            let (mean, inv) = stats[r];
            let grow = g.row(r);
            let mut sum_d = 0.0;
            let mut sum_dx = 0.0;
            for c in 0..d {
                xhat[c] = (xv.get(r, c) - mean) * inv;
                dxhat[c] = grow[c] * gam.as_slice()[c];
                sum_d += dxhat[c];
                sum_dx += dxhat[c] * xhat[c];
                gg.as_mut_slice()[c] += grow[c] * xhat[c];
                gbeta.as_mut_slice()[c] += grow[c];
            }
            let row = gx.row_mut(r);
            for c in 0..d {
                row[c] = inv / d as f64 * (d as f64 * dxhat[c] - sum_d - xhat[c] * sum_dx);
            }
        }
        accumulate(adj, x, gx);
        accumulate(adj, gamma, gg);
        accumulate(adj, beta, gbeta);
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(
        &self,
        adj: &mut [Option<Matrix>],
        g: &Matrix,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        probs: &[Matrix],
    ) {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let d = qv.cols();
        let dh = d / heads;
        let scale = 1.0 / libm::sqrt(dh as f64);
        let mut gq = Matrix::zeros(qv.rows(), d);
        let mut gk = Matrix::zeros(kv.rows(), d);
        let mut gv = Matrix::zeros(vv.rows(), d);
        let mut dp = vec![0.0; kv.rows()];
        for (h, p) in probs.iter().enumerate() {
            let lo = h * dh;
            for i in 0..qv.rows() {
                let go = &g.row(i)[lo..lo + dh];
                let prow = p.row(i);
                let mut weighted = 0.0;
                for j in 0..kv.rows() {
                    let pij = prow[j];
                    if pij == 0.0 {
                        dp[j] = 0.0;
                        continue;
                    }
                    let vrow = &vv.row(j)[lo..lo + dh];
                    let mut acc = 0.0;
                    for (a, b) in go.iter().zip(vrow) {
                        acc += a * b;
                    }
                    dp[j] = acc;
                    weighted += pij * acc;
                    for (o, gov) in gv.row_mut(j)[lo..lo + dh].iter_mut().zip(go) {
                        *o += pij * gov;
                    }
                }
                for j in 0..kv.rows() {
                    let pij = prow[j];
                    if pij == 0.0 {
                        continue;
                    }
                    let ds = pij * (dp[j] - weighted) * scale;
                    let krow = &kv.row(j)[lo..lo + dh];
                    for (o, kk) in gq.row_mut(i)[lo..lo + dh].iter_mut().zip(krow) {
                        *o += ds * kk;
                    }
                    let qrow = &qv.row(i)[lo..lo + dh];
                    for (o, qq) in gk.row_mut(j)[lo..lo + dh].iter_mut().zip(qrow) {
                        *o += ds * qq;
                    }
                }
            }
        }
        accumulate(adj, q, gq);
        accumulate(adj, k, gk);
        accumulate(adj, v, gv);
    }
}

fn accumulate(adj: &mut [Option<Matrix>], v: Var, g: Matrix) {
    match &mut adj[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{Group, ParamStore};

    fn store() -> (ParamStore, ParamId, ParamId, ParamId, ParamId) {
        let mut s = ParamStore::new();
        let w = s.add(
            "w",
            Group::Decoder,
            Matrix::from_vec(4, 4, (0..16).map(|i| ((i * 7 % 11) as f64 - 5.0) * 0.13).collect()),
        );
        let b = s.add("b", Group::Decoder, Matrix::from_rows(&[&[0.1, -0.2, 0.3, 0.05]]));
        let g = s.add("g", Group::Decoder, Matrix::from_rows(&[&[1.1, 0.9, 1.2, 0.8]]));
        let e = s.add(
            "e",
            Group::Decoder,
            Matrix::from_vec(5, 4, (0..20).map(|i| ((i * 3 % 7) as f64 - 3.0) * 0.21).collect()),
        );
        (s, w, b, g, e)
    }

    fn forward(s: &ParamStore, ids: (ParamId, ParamId, ParamId, ParamId), grads: Option<&mut [Matrix]>) -> f64 {
        let (w, b, g, e) = ids;
        let mut t = Tape::new(s);
        let ev = t.param(e);
        let x = t.gather(ev, &[0, 3, 1]);
        let wv = t.param(w);
        let bv = t.param(b);
        let gv = t.param(g);
        let h = t.matmul(x, wv);
        let h = t.add_row(h, bv);
        let h = t.layer_norm(h, gv, bv);
        let a = t.attention(h, h, x, 2, true);
        let h = t.add(a, h);
        let h = t.gelu(h);
        let ht = t.transpose(h);
        let back = t.transpose(ht);
        let logits = t.matmul(back, wv);
        let ce = t.cross_entropy(logits, &[1, 2, 3], TransReduction::TokenMean);
        let target = Matrix::from_rows(&[&[1.0, 0.5, -0.5, 0.2], &[0.0, 1.0, 0.0, 1.0], &[0.3, 0.3, 0.3, -1.0]]);
        let al = t.align_loss(&target, h, AlignLossKind::Cosine).unwrap();
        let total = 0.7 * t.scalar(al) + t.scalar(ce);
        if let Some(grads) = grads {
            t.backward(&[(al, 0.7), (ce, 1.0)], grads);
        }
        total
    }

    #[test]
    fn tape_gradients_match_central_differences() {
        let (s, w, b, g, e) = store();
        let ids = (w, b, g, e);
        let mut grads = s.zero_grads();
        forward(&s, ids, Some(&mut grads));
        for id in [w, b, g, e] {
            for i in 0..s.get(id).len() {
                let h = 1e-6;
                let mut sp = s.clone();
                sp.get_mut(id).as_mut_slice()[i] += h;
                let mut sm = s.clone();
                sm.get_mut(id).as_mut_slice()[i] -= h;
                let fd = (forward(&sp, ids, None) - forward(&sm, ids, None)) / (2.0 * h);
                let an = grads[id.index()].as_slice()[i];
                assert!((fd - an).abs() < 1e-7, "{} [{i}]: fd {fd} vs analytic {an}", s.name(id));
            }
        }
    }
}
