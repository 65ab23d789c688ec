//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation of one forward pass. Parameters enter
//! the tape once per graph through [`Graph::param`]; [`Graph::backward`]
//! walks the tape in reverse and returns per-parameter gradients, which the
//! caller folds into the [`ParamStore`] with [`ParamStore::accumulate`].

use std::collections::HashMap;

use super::{NnError, ParamId, ParamStore, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    MatMul(Var, Var),
    Transpose(Var),
    Relu(Var),
    Sigmoid(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    CausalSoftmax(Var),
    SliceCols { x: Var, start: usize },
    ConcatCols(Vec<Var>),
    SliceRows { x: Var, start: usize },
    ConcatRows(Vec<Var>),
    Conv1d { x: Var, w: Var, b: Var, stride: usize, pad: usize },
    Upsample2(Var),
    RowDiff(Var),
    SmoothL1 { a: Var, b: Var },
    BceLogits { logits: Var, target: Tensor },
    Sum(Var),
    Mean(Var),
}

struct Node {
    value: Tensor,
    op: Op,
}

pub struct Graph<'s> {
    store: &'s ParamStore,
    nodes: Vec<Node>,
    param_vars: HashMap<ParamId, Var>,
}

/// Result of [`Graph::backward`].
pub struct Gradients {
    pub(crate) params: Vec<(ParamId, Tensor)>,
    nodes: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss with respect to any recorded value.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.nodes.get(v.0).and_then(Option::as_ref)
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.params.iter().find(|(p, _)| *p == id).map(|(_, t)| t)
    }
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> NnError {
    NnError::ShapeMismatch { op, left: a.shape().to_vec(), right: b.shape().to_vec() }
}

fn need2(op: &'static str, t: &Tensor) -> Result<(usize, usize), NnError> {
    t.dims2().ok_or_else(|| NnError::ShapeMismatch { op, left: t.shape().to_vec(), right: vec![] })
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub(crate) const LAYER_NORM_EPS: f64 = 1e-10;

impl<'s> Graph<'s> {
    pub fn new(store: &'s ParamStore) -> Self {
        Self { store, nodes: Vec::new(), param_vars: HashMap::new() }
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Untracked input.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let value = self.store.value(id).clone();
        let v = self.push(value, Op::Param(id));
        self.param_vars.insert(id, v);
        v
    }

    fn binary_same(&self, op: &'static str, a: Var, b: Var) -> Result<(), NnError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(mismatch(op, ta, tb));
        }
        Ok(())
    }

    fn zip_map(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let ta = self.value(a);
        let tb = self.value(b);
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| f(*x, *y)).collect();
        let t = Tensor::new(ta.shape().to_vec(), data).expect("same shape");
        self.push(t, op)
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let ta = self.value(a);
        let t = Tensor::new(ta.shape().to_vec(), ta.data().iter().map(|x| f(*x)).collect()).expect("same shape");
        self.push(t, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.binary_same("add", a, b)?;
        Ok(self.zip_map(a, b, |x, y| x + y, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.binary_same("sub", a, b)?;
        Ok(self.zip_map(a, b, |x, y| x - y, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.binary_same("mul", a, b)?;
        Ok(self.zip_map(a, b, |x, y| x * y, Op::Mul(a, b)))
    }

    /// `[m, n] + [n]`, the row vector broadcast over rows.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, NnError> {
        let (ta, tr) = (self.value(a), self.value(row));
        let (_, n) = need2("add_row", ta)?;
        if tr.shape() != [n] {
            return Err(mismatch("add_row", ta, tr));
        }
        let data = ta.data().iter().enumerate().map(|(i, x)| x + tr.data()[i % n]).collect();
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(t, Op::AddRow(a, row)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.map(a, |x| x * s, Op::Scale(a, s))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k) = need2("matmul", ta)?;
        let (k2, n) = need2("matmul", tb)?;
        if k != k2 {
            return Err(mismatch("matmul", ta, tb));
        }
        let mut out = vec![0.0; m * n];
        let (ad, bd) = (ta.data(), tb.data());
        for i in 0..m {
            let orow = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let av = ad[i * k + p];
                if av == 0.0 {
                    continue;
                }
                let brow = &bd[p * n..(p + 1) * n];
                for (o, bv) in orow.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        }
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, NnError> {
        let ta = self.value(a);
        let (m, n) = need2("transpose", ta)?;
        let t = transpose_data(ta.data(), m, n);
        Ok(self.push(Tensor::matrix(n, m, t)?, Op::Transpose(a)))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, sigmoid, Op::Sigmoid(a))
    }

    /// Normalize each row of `[m, n]` to zero mean and unit variance, then
    /// apply the per-column affine `gamma * xhat + beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var, NnError> {
        let tx = self.value(x);
        let (m, n) = need2("layer_norm", tx)?;
        let (tg, tb) = (self.value(gamma), self.value(beta));
        if tg.shape() != [n] || tb.shape() != [n] {
            return Err(mismatch("layer_norm", tx, tg));
        }
        let mut xhat = vec![0.0; m * n];
        let mut inv_std = vec![0.0; m];
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &tx.data()[i * n..(i + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std[i] = is;
            for j in 0..n {
                let h = (row[j] - mean) * is;
                xhat[i * n + j] = h;
                out[i * n + j] = tg.data()[j] * h + tb.data()[j];
            }
        }
        let t = Tensor::matrix(m, n, out)?;
        Ok(self.push(t, Op::LayerNorm { x, gamma, beta, xhat, inv_std }))
    }

    /// Row-wise softmax of a square score matrix where row `i` only sees
    /// columns `0..=i`; masked entries are exactly zero.
    pub fn causal_softmax(&mut self, a: Var) -> Result<Var, NnError> {
        let ta = self.value(a);
        let (m, n) = need2("causal_softmax", ta)?;
        if m != n {
            return Err(mismatch("causal_softmax", ta, ta));
        }
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &ta.data()[i * n..i * n + i + 1];
            let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for (j, v) in row.iter().enumerate() {
                let e = (v - mx).exp();
                out[i * n + j] = e;
                s += e;
            }
            for j in 0..=i {
                out[i * n + j] /= s;
            }
        }
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::CausalSoftmax(a)))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var, NnError> {
        let tx = self.value(x);
        let (m, n) = need2("slice_cols", tx)?;
        if start + len > n {
            return Err(NnError::ShapeMismatch { op: "slice_cols", left: tx.shape().to_vec(), right: vec![start, len] });
        }
        let mut out = Vec::with_capacity(m * len);
        for i in 0..m {
            out.extend_from_slice(&tx.data()[i * n + start..i * n + start + len]);
        }
        Ok(self.push(Tensor::matrix(m, len, out)?, Op::SliceCols { x, start }))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, NnError> {
        let m = need2("concat_cols", self.value(parts[0]))?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = need2("concat_cols", self.value(p))?;
            if r != m {
                return Err(mismatch("concat_cols", self.value(parts[0]), self.value(p)));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = vec![0.0; m * total];
        let mut off = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let t = self.value(p);
            for i in 0..m {
                out[i * total + off..i * total + off + w].copy_from_slice(&t.data()[i * w..(i + 1) * w]);
            }
            off += w;
        }
        Ok(self.push(Tensor::matrix(m, total, out)?, Op::ConcatCols(parts.to_vec())))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var, NnError> {
        let tx = self.value(x);
        let (m, n) = need2("slice_rows", tx)?;
        if start + len > m {
            return Err(NnError::ShapeMismatch { op: "slice_rows", left: tx.shape().to_vec(), right: vec![start, len] });
        }
        let out = tx.data()[start * n..(start + len) * n].to_vec();
        Ok(self.push(Tensor::matrix(len, n, out)?, Op::SliceRows { x, start }))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, NnError> {
        let n = need2("concat_rows", self.value(parts[0]))?.1;
        let mut out = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            let (r, c) = need2("concat_rows", t)?;
            if c != n {
                return Err(mismatch("concat_rows", self.value(parts[0]), t));
            }
            out.extend_from_slice(t.data());
            rows += r;
        }
        Ok(self.push(Tensor::matrix(rows, n, out)?, Op::ConcatRows(parts.to_vec())))
    }

    /// 1-d convolution of `x: [c_in, t]` with `w: [c_out, c_in, k]` and `b: [c_out]`,
    /// zero padding `pad` on both ends.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var, NnError> {
        let (tx, tw, tb) = (self.value(x), self.value(w), self.value(b));
        let (cin, t) = need2("conv1d", tx)?;
        let [cout, cin2, k] = tw.shape()[..] else {
            return Err(mismatch("conv1d", tx, tw));
        };
        if cin != cin2 || tb.shape() != [cout] || stride == 0 || t + 2 * pad < k {
            return Err(mismatch("conv1d", tx, tw));
        }
        let tout = (t + 2 * pad - k) / stride + 1;
        let mut out = vec![0.0; cout * tout];
        let (xd, wd) = (tx.data(), tw.data());
        for o in 0..cout {
            let orow = &mut out[o * tout..(o + 1) * tout];
            orow.iter_mut().for_each(|v| *v = tb.data()[o]);
            for c in 0..cin {
                let xrow = &xd[c * t..(c + 1) * t];
                for j in 0..k {
                    let wv = wd[(o * cin + c) * k + j];
                    for (tau, ov) in orow.iter_mut().enumerate() {
                        let src = (tau * stride + j) as isize - pad as isize;
                        if src >= 0 && (src as usize) < t {
                            *ov += wv * xrow[src as usize];
                        }
                    }
                }
            }
        }
        Ok(self.push(Tensor::matrix(cout, tout, out)?, Op::Conv1d { x, w, b, stride, pad }))
    }

    /// Nearest-neighbour ×2 upsampling along the time (column) axis of `[c, t]`.
    pub fn upsample2(&mut self, x: Var) -> Result<Var, NnError> {
        let tx = self.value(x);
        let (c, t) = need2("upsample2", tx)?;
        let mut out = vec![0.0; c * 2 * t];
        for i in 0..c {
            for j in 0..t {
                let v = tx.data()[i * t + j];
                out[i * 2 * t + 2 * j] = v;
                out[i * 2 * t + 2 * j + 1] = v;
            }
        }
        Ok(self.push(Tensor::matrix(c, 2 * t, out)?, Op::Upsample2(x)))
    }

    /// Consecutive row differences of `[t, d]`: row `i` is `x[i+1] - x[i]`.
    pub fn row_diff(&mut self, x: Var) -> Result<Var, NnError> {
        let tx = self.value(x);
        let (t, d) = need2("row_diff", tx)?;
        if t < 2 {
            return Err(NnError::ShapeMismatch { op: "row_diff", left: tx.shape().to_vec(), right: vec![] });
        }
        let xd = tx.data();
        let out = (0..(t - 1) * d).map(|i| xd[i + d] - xd[i]).collect();
        Ok(self.push(Tensor::matrix(t - 1, d, out)?, Op::RowDiff(x)))
    }

    /// Mean smooth-L1 (transition point 1) between same-shape tensors.
    pub fn smooth_l1(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.binary_same("smooth_l1", a, b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let n = ta.len() as f64;
        let s: f64 = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(x, y)| {
                let d = (x - y).abs();
                if d < 1.0 {
                    0.5 * d * d
                } else {
                    d - 0.5
                }
            })
            .sum();
        Ok(self.push(Tensor::scalar(s / n), Op::SmoothL1 { a, b }))
    }

    /// Mean binary cross-entropy of `sigmoid(logits)` against 0/1 targets.
    pub fn bce_with_logits(&mut self, logits: Var, target: Tensor) -> Result<Var, NnError> {
        let tl = self.value(logits);
        if tl.shape() != target.shape() {
            return Err(mismatch("bce_with_logits", tl, &target));
        }
        let n = tl.len() as f64;
        let s: f64 = tl
            .data()
            .iter()
            .zip(target.data())
            .map(|(&z, &y)| z.max(0.0) - z * y + (-z.abs()).exp().ln_1p())
            .sum();
        Ok(self.push(Tensor::scalar(s / n), Op::BceLogits { logits, target }))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        self.push(Tensor::scalar(s), Op::Mean(a))
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients, NnError> {
        let lt = self.value(loss);
        if lt.len() != 1 {
            return Err(NnError::NonScalarLoss(lt.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(lt.shape(), 1.0));

        fn acc(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        }
        let like = |v: Var, data: Vec<f64>| Tensor::new(self.nodes[v.0].value.shape().to_vec(), data).expect("shape");

        for idx in (0..=loss.0).rev() {
            let Some(gy) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let y = &node.value;
            let g = gy.data();
            match &node.op {
                Op::Leaf | Op::Param(_) => {}
                Op::Add(a, b) => {
                    acc(&mut grads, *a, gy.clone());
                    acc(&mut grads, *b, gy.clone());
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *a, gy.clone());
                    acc(&mut grads, *b, like(*b, g.iter().map(|v| -v).collect()));
                }
                Op::Mul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    acc(&mut grads, *a, like(*a, g.iter().zip(tb.data()).map(|(x, y)| x * y).collect()));
                    acc(&mut grads, *b, like(*b, g.iter().zip(ta.data()).map(|(x, y)| x * y).collect()));
                }
                Op::AddRow(a, r) => {
                    let n = self.value(*r).len();
                    let mut gr = vec![0.0; n];
                    for (i, v) in g.iter().enumerate() {
                        gr[i % n] += v;
                    }
                    acc(&mut grads, *a, gy.clone());
                    acc(&mut grads, *r, like(*r, gr));
                }
                Op::Scale(a, s) => acc(&mut grads, *a, like(*a, g.iter().map(|v| v * s).collect())),
                Op::MatMul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let (m, k) = ta.dims2().unwrap();
                    let n = tb.dims2().unwrap().1;
                    // dA = G Bᵀ, dB = Aᵀ G
                    let mut ga = vec![0.0; m * k];
                    let mut gb = vec![0.0; k * n];
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let brow = &tb.data()[p * n..(p + 1) * n];
                            ga[i * k + p] = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
                            let av = ta.data()[i * k + p];
                            if av != 0.0 {
                                for (gbv, gv) in gb[p * n..(p + 1) * n].iter_mut().zip(grow) {
                                    *gbv += av * gv;
                                }
                            }
                        }
                    }
                    acc(&mut grads, *a, like(*a, ga));
                    acc(&mut grads, *b, like(*b, gb));
                }
                Op::Transpose(a) => {
                    let (m, n) = y.dims2().unwrap();
                    acc(&mut grads, *a, like(*a, transpose_data(g, m, n)));
                }
                Op::Relu(a) => {
                    let ta = self.value(*a);
                    acc(&mut grads, *a, like(*a, g.iter().zip(ta.data()).map(|(gv, x)| if *x > 0.0 { *gv } else { 0.0 }).collect()));
                }
                Op::Sigmoid(a) => {
                    acc(&mut grads, *a, like(*a, g.iter().zip(y.data()).map(|(gv, s)| gv * s * (1.0 - s)).collect()));
                }
                Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
                    let (m, n) = y.dims2().unwrap();
                    let tg = self.value(*gamma).data();
                    let mut gx = vec![0.0; m * n];
                    let mut gg = vec![0.0; n];
                    let mut gbeta = vec![0.0; n];
                    for i in 0..m {
                        let mut sum_d = 0.0;
                        let mut sum_dx = 0.0;
                        for j in 0..n {
                            let gv = g[i * n + j];
                            gg[j] += gv * xhat[i * n + j];
                            gbeta[j] += gv;
                            let d = gv * tg[j];
                            sum_d += d;
                            sum_dx += d * xhat[i * n + j];
                        }
                        for j in 0..n {
                            let d = g[i * n + j] * tg[j];
                            gx[i * n + j] = inv_std[i] / n as f64 * (n as f64 * d - sum_d - xhat[i * n + j] * sum_dx);
                        }
                    }
                    acc(&mut grads, *x, like(*x, gx));
                    acc(&mut grads, *gamma, like(*gamma, gg));
                    acc(&mut grads, *beta, like(*beta, gbeta));
                }
                Op::CausalSoftmax(a) => {
                    let (m, n) = y.dims2().unwrap();
                    let mut ga = vec![0.0; m * n];
                    for i in 0..m {
                        let yr = &y.data()[i * n..i * n + i + 1];
                        let gr = &g[i * n..i * n + i + 1];
                        let dotp: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..=i {
                            ga[i * n + j] = yr[j] * (gr[j] - dotp);
                        }
                    }
                    acc(&mut grads, *a, like(*a, ga));
                }
                Op::SliceCols { x, start } => {
                    let (m, len) = y.dims2().unwrap();
                    let n = self.value(*x).dims2().unwrap().1;
                    let mut gx = vec![0.0; m * n];
                    for i in 0..m {
                        gx[i * n + start..i * n + start + len].copy_from_slice(&g[i * len..(i + 1) * len]);
                    }
                    acc(&mut grads, *x, like(*x, gx));
                }
                Op::ConcatCols(parts) => {
                    let (m, total) = y.dims2().unwrap();
                    let mut off = 0;
                    for p in parts {
                        let w = self.value(*p).dims2().unwrap().1;
                        let mut gp = vec![0.0; m * w];
                        for i in 0..m {
                            gp[i * w..(i + 1) * w].copy_from_slice(&g[i * total + off..i * total + off + w]);
                        }
                        acc(&mut grads, *p, like(*p, gp));
                        off += w;
                    }
                }
                Op::SliceRows { x, start } => {
                    let (len, n) = y.dims2().unwrap();
                    let mut gx = vec![0.0; self.value(*x).len()];
                    gx[start * n..(start + len) * n].copy_from_slice(g);
                    acc(&mut grads, *x, like(*x, gx));
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let l = self.value(*p).len();
                        acc(&mut grads, *p, like(*p, g[off..off + l].to_vec()));
                        off += l;
                    }
                }
                Op::Conv1d { x, w, b, stride, pad } => {
                    let (tx, tw) = (self.value(*x), self.value(*w));
                    let (cin, t) = tx.dims2().unwrap();
                    let (cout, k) = (tw.shape()[0], tw.shape()[2]);
                    let tout = y.dims2().unwrap().1;
                    let mut gx = vec![0.0; cin * t];
                    let mut gw = vec![0.0; cout * cin * k];
                    let mut gb = vec![0.0; cout];
                    for o in 0..cout {
                        let grow = &g[o * tout..(o + 1) * tout];
                        gb[o] = grow.iter().sum();
                        for c in 0..cin {
                            for j in 0..k {
                                let wi = (o * cin + c) * k + j;
                                let wv = tw.data()[wi];
                                let mut acc_w = 0.0;
                                for (tau, gv) in grow.iter().enumerate() {
                                    let src = (tau * stride + j) as isize - *pad as isize;
                                    if src >= 0 && (src as usize) < t {
                                        let s = c * t + src as usize;
                                        acc_w += tx.data()[s] * gv;
                                        gx[s] += wv * gv;
                                    }
                                }
                                gw[wi] += acc_w;
                            }
                        }
                    }
                    acc(&mut grads, *x, like(*x, gx));
                    acc(&mut grads, *w, like(*w, gw));
                    acc(&mut grads, *b, like(*b, gb));
                }
                Op::Upsample2(x) => {
                    let (c, t) = self.value(*x).dims2().unwrap();
                    let mut gx = vec![0.0; c * t];
                    for i in 0..c {
                        for j in 0..t {
                            gx[i * t + j] = g[i * 2 * t + 2 * j] + g[i * 2 * t + 2 * j + 1];
                        }
                    }
                    acc(&mut grads, *x, like(*x, gx));
                }
                Op::RowDiff(x) => {
                    let (t, d) = self.value(*x).dims2().unwrap();
                    let mut gx = vec![0.0; t * d];
                    for i in 0..(t - 1) * d {
                        gx[i + d] += g[i];
                        gx[i] -= g[i];
                    }
                    acc(&mut grads, *x, like(*x, gx));
                }
                Op::SmoothL1 { a, b } => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let n = ta.len() as f64;
                    let ga: Vec<f64> = ta
                        .data()
                        .iter()
                        .zip(tb.data())
                        .map(|(x, y)| {
                            let d = x - y;
                            g[0] * if d.abs() < 1.0 { d } else { d.signum() } / n
                        })
                        .collect();
                    let gb = ga.iter().map(|v| -v).collect();
                    acc(&mut grads, *a, like(*a, ga));
                    acc(&mut grads, *b, like(*b, gb));
                }
                Op::BceLogits { logits, target } => {
                    let tl = self.value(*logits);
                    let n = tl.len() as f64;
                    let gl = tl.data().iter().zip(target.data()).map(|(&z, &t)| g[0] * (sigmoid(z) - t) / n).collect();
                    acc(&mut grads, *logits, like(*logits, gl));
                }
                Op::Sum(a) => {
                    let n = self.value(*a).len();
                    acc(&mut grads, *a, like(*a, vec![g[0]; n]));
                }
                Op::Mean(a) => {
                    let n = self.value(*a).len();
                    acc(&mut grads, *a, like(*a, vec![g[0] / n as f64; n]));
                }
            }
            grads[idx] = Some(gy);
        }

        let params = self
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| match n.op {
                Op::Param(id) => Some((id, grads[i].clone().unwrap_or_else(|| Tensor::zeros(n.value.shape())))),
                _ => None,
            })
            .collect();
        Ok(Gradients { params, nodes: grads })
    }
}

fn transpose_data(d: &[f64], m: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = d[i * n + j];
        }
    }
    out
}
