use std::collections::HashMap;

use super::gemm::gemm;
use super::{ParamId, ParamStore, Tensor, TensorError};

/// Epsilon added to the mean square inside `rms_norm`.
///
/// Small enough that unit-scale rows normalize to RMS 1 within 1e-10.
pub const RMS_NORM_EPS: f64 = 1e-12;

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRowBias(Var, Var),
    Mul(Var, Var),
    ScalarMul(Var, Var),
    Scale(Var, f64),
    Concat { parts: Vec<Var>, axis: usize },
    Slice { x: Var, axis: usize, start: usize },
    Transpose(Var),
    Tanh(Var),
    Sigmoid(Var),
    Gelu(Var),
    SoftmaxRows(Var),
    RmsNorm { x: Var, gain: Option<Var>, inv_rms: Vec<f64> },
    Embedding { table: Var, indices: Vec<usize> },
    CrossEntropy { logits: Var, targets: Vec<Option<usize>>, probs: Vec<f64> },
    Mean(Var),
    RepeatRows { x: Var, times: usize },
    CausalAttention { q: Var, k: Var, v: Var, groups: usize, seq: usize, heads: usize, probs: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// A tape of recorded operations.
///
/// Nodes are appended in evaluation order, so every node's inputs precede it.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    bound: HashMap<ParamId, Var>,
}

/// Result of [`Graph::backward`]: gradients for every leaf on the tape.
#[derive(Debug)]
pub struct Gradients {
    leaves: HashMap<usize, Tensor>,
    shapes: Vec<Vec<usize>>,
    params: Vec<(ParamId, Var)>,
}

impl Gradients {
    /// Gradient of the loss with respect to a leaf. Unreachable leaves get zeros.
    pub fn get(&self, var: Var) -> Tensor {
        self.leaves.get(&var.0).cloned().unwrap_or_else(|| Tensor::zeros(&self.shapes[var.0]))
    }

    /// Gradients for every trainable parameter bound on the graph, in binding order.
    pub fn params(&self) -> Vec<(ParamId, Tensor)> {
        self.params.iter().map(|&(id, v)| (id, self.get(v))).collect()
    }
}

fn mismatch(op: &'static str, shapes: &[&[usize]]) -> TensorError {
    TensorError::ShapeMismatch { op, shapes: shapes.iter().map(|s| s.to_vec()).collect() }
}

fn dims(t: &Tensor) -> (usize, usize) {
    (t.rows(), t.cols())
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A differentiable leaf that is not tied to a parameter store.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Binds a stored parameter. Frozen parameters bind as constants; binding the
    /// same id twice returns the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.bound.get(&id) {
            return v;
        }
        let v = self.push(store.get(id).clone(), Op::Leaf, store.is_trainable(id));
        self.bound.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        let ((m, k), (k2, n)) = (dims(ta), dims(tb));
        if k != k2 || ta.shape().len() != 2 || tb.shape().len() != 2 {
            return Err(mismatch("matmul", &[ta.shape(), tb.shape()]));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, ta.data(), false, tb.data(), false, &mut out, false);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::matrix(m, n, out), Op::MatMul(a, b), rg))
    }

    /// Elementwise sum of equal shapes, or `[m,n] + [1,n]` bias addition over rows.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        let rg = self.rg(a) || self.rg(b);
        if ta.shape() == tb.shape() {
            let out: Vec<f64> = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
            let t = ta.with_data(out)?;
            return Ok(self.push(t, Op::Add(a, b), rg));
        }
        let ((m, n), (bm, bn)) = (dims(ta), dims(tb));
        if tb.shape().len() == 2 && ta.shape().len() == 2 && bm == 1 && bn == n {
            let bias = tb.data();
            let out: Vec<f64> = ta.data().chunks(n).flat_map(|row| row.iter().zip(bias).map(|(x, y)| x + y)).collect();
            return Ok(self.push(Tensor::matrix(m, n, out), Op::AddRowBias(a, b), rg));
        }
        Err(mismatch("add", &[ta.shape(), tb.shape()]))
    }

    pub fn multiply(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(mismatch("multiply", &[ta.shape(), tb.shape()]));
        }
        let out: Vec<f64> = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let t = ta.with_data(out)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Mul(a, b), rg))
    }

    /// Multiplies every element of `x` by the single element of `s`.
    pub fn scalar_mul(&mut self, s: Var, x: Var) -> Result<Var, TensorError> {
        let (ts, tx) = (self.value(s), self.value(x));
        if ts.numel() != 1 {
            return Err(mismatch("scalar_mul", &[ts.shape(), tx.shape()]));
        }
        let c = ts.item();
        let t = tx.map(|v| c * v);
        let rg = self.rg(s) || self.rg(x);
        Ok(self.push(t, Op::ScalarMul(s, x), rg))
    }

    /// Multiplies by a constant.
    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let t = self.value(x).map(|v| c * v);
        let rg = self.rg(x);
        self.push(t, Op::Scale(x, c), rg)
    }

    /// Joins rank-2 tensors along rows (`axis = 0`) or columns (`axis = 1`).
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var, TensorError> {
        if parts.is_empty() || axis > 1 {
            return Err(TensorError::Invalid {
                op: "concat",
                reason: format!("{} parts along axis {axis}", parts.len()),
            });
        }
        let shapes: Vec<&[usize]> = parts.iter().map(|&p| self.shape(p)).collect();
        let t = if axis == 0 {
            let refs: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
            Tensor::vstack(&refs).map_err(|_| mismatch("concat", &shapes))?
        } else {
            let rows = self.value(parts[0]).rows();
            if parts.iter().any(|&p| self.value(p).rows() != rows) {
                return Err(mismatch("concat", &shapes));
            }
            let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
            let mut out = Vec::with_capacity(rows * cols);
            for r in 0..rows {
                for &p in parts {
                    out.extend_from_slice(self.value(p).row(r));
                }
            }
            Tensor::matrix(rows, cols, out)
        };
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(t, Op::Concat { parts: parts.to_vec(), axis }, rg))
    }

    /// Takes `len` rows (`axis = 0`) or columns (`axis = 1`) starting at `start`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var, TensorError> {
        let tx = self.value(x);
        let (m, n) = dims(tx);
        let bound = if axis == 0 { m } else { n };
        if axis > 1 || len == 0 || start + len > bound {
            return Err(TensorError::IndexOutOfRange { op: "slice", index: start + len, bound });
        }
        let t = if axis == 0 {
            Tensor::matrix(len, n, tx.data()[start * n..(start + len) * n].to_vec())
        } else {
            let out = (0..m).flat_map(|r| tx.row(r)[start..start + len].iter().copied()).collect();
            Tensor::matrix(m, len, out)
        };
        let rg = self.rg(x);
        Ok(self.push(t, Op::Slice { x, axis, start }, rg))
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let tx = self.value(x);
        let (m, n) = dims(tx);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = tx.data()[i * n + j];
            }
        }
        let rg = self.rg(x);
        self.push(Tensor::matrix(n, m, out), Op::Transpose(x), rg)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let t = self.value(x).map(f64::tanh);
        let rg = self.rg(x);
        self.push(t, Op::Tanh(x), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let t = self.value(x).map(sigmoid);
        let rg = self.rg(x);
        self.push(t, Op::Sigmoid(x), rg)
    }

    /// GELU, tanh approximation: `0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))`.
    pub fn gelu(&mut self, x: Var) -> Var {
        let t = self.value(x).map(|v| 0.5 * v * (1.0 + (GELU_C * (v + GELU_A * v * v * v)).tanh()));
        let rg = self.rg(x);
        self.push(t, Op::Gelu(x), rg)
    }

    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let tx = self.value(x);
        let n = tx.cols();
        let mut out = tx.to_vec();
        for row in out.chunks_mut(n) {
            softmax_in_place(row);
        }
        let t = tx.with_data(out).expect("same shape");
        let rg = self.rg(x);
        self.push(t, Op::SoftmaxRows(x), rg)
    }

    /// Scales each row to unit root-mean-square, then multiplies by `gain` if given.
    pub fn rms_norm(&mut self, x: Var, gain: Option<Var>) -> Result<Var, TensorError> {
        let tx = self.value(x);
        let (m, n) = dims(tx);
        if let Some(g) = gain {
            let tg = self.value(g);
            if tg.shape() != [1, n] {
                return Err(mismatch("rms_norm", &[tx.shape(), tg.shape()]));
            }
        }
        let gain_vals = gain.map(|g| self.value(g).data());
        let mut inv_rms = Vec::with_capacity(m);
        let mut out = Vec::with_capacity(m * n);
        for row in tx.data().chunks(n) {
            let ms = row.iter().map(|v| v * v).sum::<f64>() / n as f64;
            let inv = 1.0 / (ms + RMS_NORM_EPS).sqrt();
            inv_rms.push(inv);
            match gain_vals {
                Some(gv) => out.extend(row.iter().zip(gv).map(|(v, g)| v * inv * g)),
                None => out.extend(row.iter().map(|v| v * inv)),
            }
        }
        let rg = self.rg(x) || gain.is_some_and(|g| self.rg(g));
        Ok(self.push(Tensor::matrix(m, n, out), Op::RmsNorm { x, gain, inv_rms }, rg))
    }

    /// Gathers rows of `table`.
    pub fn embedding_lookup(&mut self, table: Var, indices: &[usize]) -> Result<Var, TensorError> {
        let tt = self.value(table);
        let (v, d) = dims(tt);
        if indices.is_empty() {
            return Err(TensorError::Invalid { op: "embedding_lookup", reason: "no indices".into() });
        }
        let mut out = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            if i >= v {
                return Err(TensorError::IndexOutOfRange { op: "embedding_lookup", index: i, bound: v });
            }
            out.extend_from_slice(tt.row(i));
        }
        let rg = self.rg(table);
        Ok(self.push(Tensor::matrix(indices.len(), d, out), Op::Embedding { table, indices: indices.to_vec() }, rg))
    }

    /// Mean negative log-likelihood over the rows that carry a target.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[Option<usize>]) -> Result<Var, TensorError> {
        let tl = self.value(logits);
        let (m, k) = dims(tl);
        if targets.len() != m {
            return Err(mismatch("cross_entropy", &[tl.shape(), &[targets.len()]]));
        }
        let mut probs = tl.to_vec();
        let mut total = 0.0;
        let mut count = 0usize;
        for (row, t) in probs.chunks_mut(k).zip(targets) {
            let Some(t) = *t else { continue };
            if t >= k {
                return Err(TensorError::IndexOutOfRange { op: "cross_entropy", index: t, bound: k });
            }
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            total += lse - row[t];
            count += 1;
            softmax_in_place(row);
        }
        if count == 0 {
            return Err(TensorError::Invalid { op: "cross_entropy", reason: "no target rows".into() });
        }
        let rg = self.rg(logits);
        Ok(self.push(
            Tensor::scalar(total / count as f64),
            Op::CrossEntropy { logits, targets: targets.to_vec(), probs },
            rg,
        ))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let tx = self.value(x);
        let m = tx.data().iter().sum::<f64>() / tx.numel() as f64;
        let rg = self.rg(x);
        self.push(Tensor::scalar(m), Op::Mean(x), rg)
    }

    /// Repeats each row `times` times consecutively: `[b,n] -> [b*times,n]`.
    pub fn repeat_rows(&mut self, x: Var, times: usize) -> Result<Var, TensorError> {
        if times == 0 {
            return Err(TensorError::Invalid { op: "repeat_rows", reason: "times must be positive".into() });
        }
        let tx = self.value(x);
        let (m, n) = dims(tx);
        let mut out = Vec::with_capacity(m * times * n);
        for r in 0..m {
            for _ in 0..times {
                out.extend_from_slice(tx.row(r));
            }
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::matrix(m * times, n, out), Op::RepeatRows { x, times }, rg))
    }

    /// Multi-head causal self-attention over `groups` independent sequences of
    /// length `seq` stacked row-wise in `q`, `k`, `v` (each `[groups*seq, width]`).
    /// Position `i` attends to positions `0..=i` of its own sequence only.
    pub fn causal_attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        groups: usize,
        seq: usize,
        heads: usize,
    ) -> Result<Var, TensorError> {
        let (tq, tk, tv) = (self.value(q), self.value(k), self.value(v));
        let (rows, width) = dims(tq);
        if tk.shape() != tq.shape()
            || tv.shape() != tq.shape()
            || rows != groups * seq
            || heads == 0
            || width % heads != 0
        {
            return Err(mismatch("causal_attention", &[tq.shape(), tk.shape(), tv.shape()]));
        }
        let d = width / heads;
        let scale = 1.0 / (d as f64).sqrt();
        let (qd, kd, vd) = (tq.data(), tk.data(), tv.data());
        let mut probs = vec![0.0; groups * heads * seq * seq];
        let mut out = vec![0.0; rows * width];
        for g in 0..groups {
            for h in 0..heads {
                let off = h * d;
                for i in 0..seq {
                    let qi = &qd[(g * seq + i) * width + off..][..d];
                    let base = ((g * heads + h) * seq + i) * seq;
                    let p = &mut probs[base..base + i + 1];
                    for (j, pj) in p.iter_mut().enumerate() {
                        let kj = &kd[(g * seq + j) * width + off..][..d];
                        *pj = scale * qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>();
                    }
                    softmax_in_place(p);
                    let oi = &mut out[(g * seq + i) * width + off..][..d];
                    for (j, &pj) in p.iter().enumerate() {
                        let vj = &vd[(g * seq + j) * width + off..][..d];
                        for (o, x) in oi.iter_mut().zip(vj) {
                            *o += pj * x;
                        }
                    }
                }
            }
        }
        let rg = self.rg(q) || self.rg(k) || self.rg(v);
        Ok(self.push(Tensor::matrix(rows, width, out), Op::CausalAttention { q, k, v, groups, seq, heads, probs }, rg))
    }

    /// Post-softmax attention weights of a `causal_attention` node, laid out as
    /// `[groups][heads][seq][seq]` with zeros above the diagonal.
    pub fn attention_probs(&self, var: Var) -> Option<&[f64]> {
        match &self.nodes[var.0].op {
            Op::CausalAttention { probs, .. } => Some(probs),
            _ => None,
        }
    }

    /// Reverse sweep from a scalar loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients, TensorError> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(TensorError::NotScalar { shape: lv.shape().to_vec() });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        let mut leaves = HashMap::new();
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            if let Op::Leaf = node.op {
                leaves.insert(i, node.value.with_data(g)?);
                continue;
            }
            self.backprop(node, &g, &mut grads);
        }
        let params = self
            .bound
            .iter()
            .filter(|(_, v)| self.nodes[v.0].requires_grad)
            .map(|(&id, &v)| (id, v))
            .collect::<std::collections::BTreeMap<_, _>>()
            .into_iter()
            .collect();
        Ok(Gradients { leaves, shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(), params })
    }

    fn slot<'a>(&self, grads: &'a mut [Option<Vec<f64>>], v: Var) -> Option<&'a mut Vec<f64>> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let n = self.nodes[v.0].value.numel();
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; n]))
    }

    fn backprop(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let y = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let ((m, k), n) = (dims(ta), tb.cols());
                if let Some(ga) = self.slot(grads, *a) {
                    gemm(m, n, k, g, false, tb.data(), true, ga, true);
                }
                if let Some(gb) = self.slot(grads, *b) {
                    gemm(k, m, n, ta.data(), true, g, false, gb, true);
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if let Some(gv) = self.slot(grads, *v) {
                        gv.iter_mut().zip(g).for_each(|(x, d)| *x += d);
                    }
                }
            }
            Op::AddRowBias(a, b) => {
                if let Some(ga) = self.slot(grads, *a) {
                    ga.iter_mut().zip(g).for_each(|(x, d)| *x += d);
                }
                let n = self.value(*b).cols();
                if let Some(gb) = self.slot(grads, *b) {
                    for row in g.chunks(n) {
                        gb.iter_mut().zip(row).for_each(|(x, d)| *x += d);
                    }
                }
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if let Some(ga) = self.slot(grads, *a) {
                    for ((x, d), o) in ga.iter_mut().zip(g).zip(tb.data()) {
                        *x += d * o;
                    }
                }
                if let Some(gb) = self.slot(grads, *b) {
                    for ((x, d), o) in gb.iter_mut().zip(g).zip(ta.data()) {
                        *x += d * o;
                    }
                }
            }
            Op::ScalarMul(s, x) => {
                let c = self.value(*s).item();
                let tx = self.value(*x);
                if let Some(gs) = self.slot(grads, *s) {
                    gs[0] += g.iter().zip(tx.data()).map(|(d, v)| d * v).sum::<f64>();
                }
                if let Some(gx) = self.slot(grads, *x) {
                    gx.iter_mut().zip(g).for_each(|(x, d)| *x += c * d);
                }
            }
            Op::Scale(x, c) => {
                if let Some(gx) = self.slot(grads, *x) {
                    gx.iter_mut().zip(g).for_each(|(x, d)| *x += c * d);
                }
            }
            Op::Concat { parts, axis } => {
                let total_cols = node.value.cols();
                let mut offset = 0;
                for &p in parts {
                    let (pm, pn) = dims(self.value(p));
                    if let Some(gp) = self.slot(grads, p) {
                        if *axis == 0 {
                            let src = &g[offset * total_cols..(offset + pm) * total_cols];
                            gp.iter_mut().zip(src).for_each(|(x, d)| *x += d);
                        } else {
                            for r in 0..pm {
                                let src = &g[r * total_cols + offset..][..pn];
                                gp[r * pn..(r + 1) * pn].iter_mut().zip(src).for_each(|(x, d)| *x += d);
                            }
                        }
                    }
                    offset += if *axis == 0 { pm } else { pn };
                }
            }
            Op::Slice { x, axis, start } => {
                let n = self.value(*x).cols();
                let (om, on) = dims(&node.value);
                if let Some(gx) = self.slot(grads, *x) {
                    if *axis == 0 {
                        gx[start * n..(start + om) * n].iter_mut().zip(g).for_each(|(x, d)| *x += d);
                    } else {
                        for r in 0..om {
                            gx[r * n + start..][..on]
                                .iter_mut()
                                .zip(&g[r * on..(r + 1) * on])
                                .for_each(|(x, d)| *x += d);
                        }
                    }
                }
            }
            Op::Transpose(x) => {
                let (m, n) = dims(self.value(*x));
                if let Some(gx) = self.slot(grads, *x) {
                    for i in 0..m {
                        for j in 0..n {
                            gx[i * n + j] += g[j * m + i];
                        }
                    }
                }
            }
            Op::Tanh(x) => {
                if let Some(gx) = self.slot(grads, *x) {
                    for ((x, d), t) in gx.iter_mut().zip(g).zip(y) {
                        *x += d * (1.0 - t * t);
                    }
                }
            }
            Op::Sigmoid(x) => {
                if let Some(gx) = self.slot(grads, *x) {
                    for ((x, d), s) in gx.iter_mut().zip(g).zip(y) {
                        *x += d * s * (1.0 - s);
                    }
                }
            }
            Op::Gelu(x) => {
                let tx = self.value(*x);
                if let Some(gx) = self.slot(grads, *x) {
                    for ((acc, d), &v) in gx.iter_mut().zip(g).zip(tx.data()) {
                        let t = (GELU_C * (v + GELU_A * v * v * v)).tanh();
                        let dt = (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * v * v);
                        *acc += d * (0.5 * (1.0 + t) + 0.5 * v * dt);
                    }
                }
            }
            Op::SoftmaxRows(x) => {
                let n = node.value.cols();
                if let Some(gx) = self.slot(grads, *x) {
                    for ((gr, dr), pr) in gx.chunks_mut(n).zip(g.chunks(n)).zip(y.chunks(n)) {
                        let dot: f64 = dr.iter().zip(pr).map(|(d, p)| d * p).sum();
                        for ((acc, d), p) in gr.iter_mut().zip(dr).zip(pr) {
                            *acc += p * (d - dot);
                        }
                    }
                }
            }
            Op::RmsNorm { x, gain, inv_rms } => {
                let tx = self.value(*x);
                let n = tx.cols();
                let gain_vals = gain.map(|gv| self.value(gv).to_vec());
                // d(normalized) = dy * gain
                let dn: Vec<f64> = match &gain_vals {
                    Some(gv) => g.chunks(n).flat_map(|r| r.iter().zip(gv).map(|(d, w)| d * w)).collect(),
                    None => g.to_vec(),
                };
                if let Some(gvar) = gain {
                    if let Some(gg) = self.slot(grads, *gvar) {
                        for ((row, dr), inv) in tx.data().chunks(n).zip(g.chunks(n)).zip(inv_rms) {
                            for ((acc, d), v) in gg.iter_mut().zip(dr).zip(row) {
                                *acc += d * v * inv;
                            }
                        }
                    }
                }
                if let Some(gx) = self.slot(grads, *x) {
                    for (((acc_row, row), dr), &inv) in
                        gx.chunks_mut(n).zip(tx.data().chunks(n)).zip(dn.chunks(n)).zip(inv_rms)
                    {
                        let proj = dr.iter().zip(row).map(|(d, v)| d * v * inv).sum::<f64>() / n as f64;
                        for ((acc, d), v) in acc_row.iter_mut().zip(dr).zip(row) {
                            *acc += inv * (d - v * inv * proj);
                        }
                    }
                }
            }
            Op::Embedding { table, indices } => {
                let d = node.value.cols();
                if let Some(gt) = self.slot(grads, *table) {
                    for (r, &i) in indices.iter().enumerate() {
                        gt[i * d..(i + 1) * d].iter_mut().zip(&g[r * d..(r + 1) * d]).for_each(|(x, v)| *x += v);
                    }
                }
            }
            Op::CrossEntropy { logits, targets, probs } => {
                let k = self.value(*logits).cols();
                let count = targets.iter().filter(|t| t.is_some()).count() as f64;
                let scale = g[0] / count;
                if let Some(gl) = self.slot(grads, *logits) {
                    for (r, t) in targets.iter().enumerate() {
                        let Some(t) = *t else { continue };
                        let row = &mut gl[r * k..(r + 1) * k];
                        for (j, acc) in row.iter_mut().enumerate() {
                            let onehot = if j == t { 1.0 } else { 0.0 };
                            *acc += scale * (probs[r * k + j] - onehot);
                        }
                    }
                }
            }
            Op::Mean(x) => {
                let n = self.value(*x).numel() as f64;
                if let Some(gx) = self.slot(grads, *x) {
                    gx.iter_mut().for_each(|v| *v += g[0] / n);
                }
            }
            Op::RepeatRows { x, times } => {
                let n = node.value.cols();
                if let Some(gx) = self.slot(grads, *x) {
                    for (r, out_row) in g.chunks(n).enumerate() {
                        let src = r / times;
                        gx[src * n..(src + 1) * n].iter_mut().zip(out_row).for_each(|(a, d)| *a += d);
                    }
                }
            }
            Op::CausalAttention { q, k, v, groups, seq, heads, probs } => {
                self.attention_backward(g, *q, *k, *v, (*groups, *seq, *heads), probs, grads)
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(
        &self,
        g: &[f64],
        q: Var,
        k: Var,
        v: Var,
        (groups, seq, heads): (usize, usize, usize),
        probs: &[f64],
        grads: &mut [Option<Vec<f64>>],
    ) {
        let width = self.value(q).cols();
        let d = width / heads;
        let scale = 1.0 / (d as f64).sqrt();
        let rows = groups * seq;
        let (qd, kd, vd) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let mut dq = vec![0.0; rows * width];
        let mut dk = vec![0.0; rows * width];
        let mut dv = vec![0.0; rows * width];
        let mut ds = vec![0.0; seq];
        for gi in 0..groups {
            for h in 0..heads {
                let off = h * d;
                for i in 0..seq {
                    let base = ((gi * heads + h) * seq + i) * seq;
                    let p = &probs[base..base + i + 1];
                    let doi = &g[(gi * seq + i) * width + off..][..d];
                    let mut dot = 0.0;
                    for (j, &pj) in p.iter().enumerate() {
                        let vj = &vd[(gi * seq + j) * width + off..][..d];
                        let dp: f64 = doi.iter().zip(vj).map(|(a, b)| a * b).sum();
                        ds[j] = dp;
                        dot += pj * dp;
                        let dvj = &mut dv[(gi * seq + j) * width + off..][..d];
                        dvj.iter_mut().zip(doi).for_each(|(acc, o)| *acc += pj * o);
                    }
                    let qi = &qd[(gi * seq + i) * width + off..][..d];
                    for (j, &pj) in p.iter().enumerate() {
                        let s = pj * (ds[j] - dot) * scale;
                        let kj = &kd[(gi * seq + j) * width + off..][..d];
                        let dqi = &mut dq[(gi * seq + i) * width + off..][..d];
                        dqi.iter_mut().zip(kj).for_each(|(acc, x)| *acc += s * x);
                        let dkj = &mut dk[(gi * seq + j) * width + off..][..d];
                        dkj.iter_mut().zip(qi).for_each(|(acc, x)| *acc += s * x);
                    }
                }
            }
        }
        for (var, local) in [(q, dq), (k, dk), (v, dv)] {
            if let Some(gv) = self.slot(grads, var) {
                gv.iter_mut().zip(&local).for_each(|(a, d)| *a += d);
            }
        }
    }
}
