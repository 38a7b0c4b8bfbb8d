use alloc::boxed::Box;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::math;
use super::tensor::{axpy, dot, gemm_nn, gemm_nt, gemm_tn, Tensor};
use crate::{Error, Result};

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// How a flattened `[batch * len x d]` activation splits into sequences.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SeqLayout {
    pub batch: usize,
    pub len: usize,
}

/// Additive score for masked keys.
const MASKED_SCORE: f64 = -1e9;

struct AttentionCache {
    q: Var,
    k: Var,
    v: Var,
    layout: SeqLayout,
    heads: usize,
    scale: f64,
    /// `[batch][head][query][key]` softmax weights.
    probs: Vec<f64>,
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulTransB(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    RowSoftmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
    GatherRows {
        src: Var,
        index: Vec<usize>,
    },
    ConcatRows(Vec<Var>),
    SumAll(Var),
    Attention(Box<AttentionCache>),
}

struct Node {
    value: Tensor,
    requires_grad: bool,
    op: Op,
}

/// Append-only computation tape.
///
/// Nodes are recorded in creation order, which is already a topological
/// order, so backward is a single reverse sweep that visits every node once.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
    backward_done: bool,
}

fn check_finite(op: &str, t: &Tensor) -> Result<()> {
    if t.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("input to {op}")))
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Leaf whose gradient is tracked.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push_node(value, true, Op::Leaf)
    }

    /// Leaf without gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_node(value, false, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Gradient after [`Graph::backward`]; `None` when nothing flowed into `v`.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    /// Softmax weights recorded by an attention node, laid out
    /// `[batch][head][query][key]`.
    pub fn attention_weights(&self, v: Var) -> Option<&[f64]> {
        match &self.nodes[v.0].op {
            Op::Attention(cache) => Some(&cache.probs),
            _ => None,
        }
    }

    fn push_node(&mut self, value: Tensor, requires_grad: bool, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor, parents: &[Var], op: Op) -> Var {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.push_node(value, requires_grad, op)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::Dimension { op, lhs: sa, rhs: sb });
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(value, &[a, b], Op::MatMul(a, b)))
    }

    /// `a * b^T` without materialising the transpose.
    pub fn matmul_transb(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.shape(a);
        let (n, k2) = self.shape(b);
        if k != k2 {
            return Err(Error::Dimension {
                op: "matmul_transb",
                lhs: (m, k),
                rhs: (n, k2),
            });
        }
        let mut out = Tensor::zeros(m, n);
        gemm_nt(self.value(a).data(), self.value(b).data(), out.data_mut(), m, k, n);
        Ok(self.push(out, &[a, b], Op::MatMulTransB(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        self.push(value, &[a], Op::Transpose(a))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let mut value = self.value(a).clone();
        value.add_assign(self.value(b));
        Ok(self.push(value, &[a, b], Op::Add(a, b)))
    }

    /// Adds a `1 x n` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (m, n) = self.shape(a);
        if self.shape(row) != (1, n) {
            return Err(Error::Dimension {
                op: "add_row",
                lhs: (m, n),
                rhs: self.shape(row),
            });
        }
        let mut value = self.value(a).clone();
        let r = self.value(row).data();
        for i in 0..m {
            for (x, b) in value.row_mut(i).iter_mut().zip(r) {
                *x += b;
            }
        }
        Ok(self.push(value, &[a, row], Op::AddRow(a, row)))
    }

    /// Element-wise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let (m, n) = self.shape(a);
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let value = Tensor::from_vec(m, n, data)?;
        Ok(self.push(value, &[a, b], Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let mut value = self.value(a).clone();
        value.data_mut().iter_mut().for_each(|x| *x *= c);
        self.push(value, &[a], Op::Scale(a, c))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let mut value = self.value(a).clone();
        value.data_mut().iter_mut().for_each(|x| *x = x.max(0.0));
        self.push(value, &[a], Op::Relu(a))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let total = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(total), &[a], Op::SumAll(a))
    }

    /// Softmax over each row, stabilised by subtracting the row maximum.
    pub fn row_softmax(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        check_finite("row_softmax", x)?;
        let mut value = x.clone();
        for i in 0..value.rows() {
            softmax_in_place(value.row_mut(i));
        }
        Ok(self.push(value, &[a], Op::RowSoftmax(a)))
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (m, n) = self.shape(x);
        if n == 0 {
            return Err(Error::Input("layer_norm needs at least one column".into()));
        }
        for p in [gain, bias] {
            if self.shape(p) != (1, n) {
                return Err(Error::Dimension {
                    op: "layer_norm",
                    lhs: (m, n),
                    rhs: self.shape(p),
                });
            }
        }
        let input = self.value(x);
        check_finite("layer_norm", input)?;
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let mut out = Tensor::zeros(m, n);
        let mut xhat = vec![0.0; m * n];
        let mut rstd = vec![0.0; m];
        for i in 0..m {
            let row = input.row(i);
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let r = 1.0 / math::sqrt(var + eps);
            rstd[i] = r;
            let out_row = out.row_mut(i);
            for j in 0..n {
                let h = (row[j] - mean) * r;
                xhat[i * n + j] = h;
                out_row[j] = h * g[j] + b[j];
            }
        }
        Ok(self.push(
            out,
            &[x, gain, bias],
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
        ))
    }

    /// Mean negative log-likelihood of `labels` under row-wise softmax.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (b, c) = self.shape(logits);
        if labels.len() != b {
            return Err(Error::Dimension {
                op: "cross_entropy",
                lhs: (b, c),
                rhs: (labels.len(), 1),
            });
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::Input(format!(
                "label {bad} out of range for {c} classes"
            )));
        }
        if b == 0 {
            return Err(Error::Input("cross_entropy on an empty batch".into()));
        }
        let x = self.value(logits);
        check_finite("cross_entropy", x)?;
        let mut probs = x.data().to_vec();
        let mut loss = 0.0;
        for (i, &label) in labels.iter().enumerate() {
            let row = x.row(i);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = row.iter().map(|v| math::exp(v - max)).sum();
            let log_z = max + math::ln(sum);
            loss += log_z - row[label];
            for (p, v) in probs[i * c..(i + 1) * c].iter_mut().zip(row) {
                *p = math::exp(v - log_z);
            }
        }
        let value = Tensor::scalar(loss / b as f64);
        Ok(self.push(
            value,
            &[logits],
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
        ))
    }

    /// Rows of `src` picked by `index`; the backward pass scatter-adds.
    /// Serves both embedding lookup and row extraction from activations.
    pub fn gather_rows(&mut self, src: Var, index: &[usize]) -> Result<Var> {
        let (m, n) = self.shape(src);
        if let Some(&bad) = index.iter().find(|&&i| i >= m) {
            return Err(Error::Dimension {
                op: "gather_rows",
                lhs: (m, n),
                rhs: (bad, n),
            });
        }
        let value = self.value(src).select_rows(index);
        Ok(self.push(
            value,
            &[src],
            Op::GatherRows {
                src,
                index: index.to_vec(),
            },
        ))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = parts.first().map_or(0, |&p| self.shape(p).1);
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let (r, c) = self.shape(p);
            if c != cols {
                return Err(Error::Dimension {
                    op: "concat_rows",
                    lhs: (rows, cols),
                    rhs: (r, c),
                });
            }
            data.extend_from_slice(self.value(p).data());
            rows += r;
        }
        let value = Tensor::from_vec(rows, cols, data)?;
        Ok(self.push(value, parts, Op::ConcatRows(parts.to_vec())))
    }

    /// Masked multi-head scaled dot-product attention over a flattened batch.
    ///
    /// `q`, `k`, `v` are `[batch * len x d]`; `key_mask[b * len + j]` says
    /// whether key `j` of sequence `b` may be attended to. Masked keys get an
    /// additive `-1e9` before the softmax. Head `h` uses columns
    /// `h * d / heads .. (h + 1) * d / heads` and scores are scaled by
    /// `1 / sqrt(d / heads)`.
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        layout: SeqLayout,
        heads: usize,
        key_mask: &[bool],
    ) -> Result<Var> {
        let (rows, d) = self.shape(q);
        for other in [k, v] {
            if self.shape(other) != (rows, d) {
                return Err(Error::Dimension {
                    op: "attention",
                    lhs: (rows, d),
                    rhs: self.shape(other),
                });
            }
        }
        if rows != layout.batch * layout.len || key_mask.len() != rows {
            return Err(Error::Dimension {
                op: "attention",
                lhs: (rows, d),
                rhs: (layout.batch * layout.len, key_mask.len()),
            });
        }
        if heads == 0 || d % heads != 0 {
            return Err(Error::Config(format!(
                "model width {d} not divisible by {heads} heads"
            )));
        }
        let dh = d / heads;
        let scale = 1.0 / math::sqrt(dh as f64);
        let len = layout.len;
        let (qv, kv, vv) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let mut probs = vec![0.0; layout.batch * heads * len * len];
        let mut out = Tensor::zeros(rows, d);
        let od = out.data_mut();
        for b in 0..layout.batch {
            for h in 0..heads {
                let col = h * dh;
                for i in 0..len {
                    let qi = &qv[(b * len + i) * d + col..][..dh];
                    let p_row = &mut probs[((b * heads + h) * len + i) * len..][..len];
                    for j in 0..len {
                        let kj = &kv[(b * len + j) * d + col..][..dh];
                        let mut s = scale * dot(qi, kj);
                        if !key_mask[b * len + j] {
                            s += MASKED_SCORE;
                        }
                        p_row[j] = s;
                    }
                    softmax_in_place(p_row);
                    let o_row = &mut od[(b * len + i) * d + col..][..dh];
                    for j in 0..len {
                        let p = p_row[j];
                        if p != 0.0 {
                            axpy(p, &vv[(b * len + j) * d + col..][..dh], o_row);
                        }
                    }
                }
            }
        }
        let cache = AttentionCache {
            q,
            k,
            v,
            layout,
            heads,
            scale,
            probs,
        };
        Ok(self.push(out, &[q, k, v], Op::Attention(Box::new(cache))))
    }

    /// Clears gradients so that backward may run again.
    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
        self.backward_done = false;
    }

    /// Reverse sweep from a `1 x 1` loss.
    ///
    /// Fails with [`Error::GradientsNotReset`] if called twice without an
    /// intervening [`Graph::zero_grad`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::GradientsNotReset);
        }
        let shape = self.shape(loss);
        if shape != (1, 1) {
            return Err(Error::Dimension {
                op: "backward",
                lhs: shape,
                rhs: (1, 1),
            });
        }
        self.backward_done = true;
        self.grads[loss.0] = Some(Tensor::scalar(1.0));
        let nodes = &self.nodes;
        let grads = &mut self.grads;
        for idx in (0..=loss.0).rev() {
            if !nodes[idx].requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            backprop_node(nodes, grads, idx, &g);
            grads[idx] = Some(g);
        }
        Ok(())
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in row.iter_mut() {
        *x = math::exp(*x - max);
        sum += *x;
    }
    for x in row.iter_mut() {
        *x /= sum;
    }
}

/// Mutable gradient buffer of `v`, allocated on first use. `None` when `v`
/// does not track gradients.
fn grad_buf<'a>(nodes: &[Node], grads: &'a mut [Option<Tensor>], v: Var) -> Option<&'a mut [f64]> {
    let node = &nodes[v.0];
    if !node.requires_grad {
        return None;
    }
    let (m, n) = node.value.shape();
    Some(
        grads[v.0]
            .get_or_insert_with(|| Tensor::zeros(m, n))
            .data_mut(),
    )
}

fn backprop_node(nodes: &[Node], grads: &mut [Option<Tensor>], idx: usize, g: &Tensor) {
    let node = &nodes[idx];
    let gd = g.data();
    match &node.op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let (m, k) = nodes[a.0].value.shape();
            let n = nodes[b.0].value.cols();
            if let Some(da) = grad_buf(nodes, grads, *a) {
                gemm_nt(gd, nodes[b.0].value.data(), da, m, n, k);
            }
            if let Some(db) = grad_buf(nodes, grads, *b) {
                gemm_tn(nodes[a.0].value.data(), gd, db, m, k, n);
            }
        }
        Op::MatMulTransB(a, b) => {
            let (m, k) = nodes[a.0].value.shape();
            let n = nodes[b.0].value.rows();
            if let Some(da) = grad_buf(nodes, grads, *a) {
                gemm_nn(gd, nodes[b.0].value.data(), da, m, n, k);
            }
            if let Some(db) = grad_buf(nodes, grads, *b) {
                gemm_tn(gd, nodes[a.0].value.data(), db, m, n, k);
            }
        }
        Op::Transpose(a) => {
            let (m, n) = g.shape();
            if let Some(da) = grad_buf(nodes, grads, *a) {
                for i in 0..m {
                    for j in 0..n {
                        da[j * m + i] += gd[i * n + j];
                    }
                }
            }
        }
        Op::Add(a, b) => {
            for p in [a, b] {
                if let Some(dp) = grad_buf(nodes, grads, *p) {
                    axpy(1.0, gd, dp);
                }
            }
        }
        Op::AddRow(a, row) => {
            if let Some(da) = grad_buf(nodes, grads, *a) {
                axpy(1.0, gd, da);
            }
            if let Some(dr) = grad_buf(nodes, grads, *row) {
                let n = g.cols();
                for i in 0..g.rows() {
                    axpy(1.0, &gd[i * n..(i + 1) * n], dr);
                }
            }
        }
        Op::Mul(a, b) => {
            for (p, other) in [(a, b), (b, a)] {
                let ov = nodes[other.0].value.data();
                if let Some(dp) = grad_buf(nodes, grads, *p) {
                    for ((d, gi), oi) in dp.iter_mut().zip(gd).zip(ov) {
                        *d += gi * oi;
                    }
                }
            }
        }
        Op::Scale(a, c) => {
            if let Some(da) = grad_buf(nodes, grads, *a) {
                axpy(*c, gd, da);
            }
        }
        Op::Relu(a) => {
            let x = nodes[a.0].value.data();
            if let Some(da) = grad_buf(nodes, grads, *a) {
                for ((d, gi), xi) in da.iter_mut().zip(gd).zip(x) {
                    if *xi > 0.0 {
                        *d += gi;
                    }
                }
            }
        }
        Op::SumAll(a) => {
            let s = gd[0];
            if let Some(da) = grad_buf(nodes, grads, *a) {
                da.iter_mut().for_each(|d| *d += s);
            }
        }
        Op::RowSoftmax(a) => {
            let y = &node.value;
            let n = y.cols();
            if let Some(da) = grad_buf(nodes, grads, *a) {
                for i in 0..y.rows() {
                    let yi = y.row(i);
                    let gi = &gd[i * n..(i + 1) * n];
                    let inner = dot(gi, yi);
                    for j in 0..n {
                        da[i * n + j] += yi[j] * (gi[j] - inner);
                    }
                }
            }
        }
        Op::LayerNorm {
            x,
            gain,
            bias,
            xhat,
            rstd,
        } => {
            let (m, n) = g.shape();
            let gv = nodes[gain.0].value.data();
            if let Some(dg) = grad_buf(nodes, grads, *gain) {
                for i in 0..m {
                    for j in 0..n {
                        dg[j] += gd[i * n + j] * xhat[i * n + j];
                    }
                }
            }
            if let Some(db) = grad_buf(nodes, grads, *bias) {
                for i in 0..m {
                    axpy(1.0, &gd[i * n..(i + 1) * n], db);
                }
            }
            if let Some(dx) = grad_buf(nodes, grads, *x) {
                let inv_n = 1.0 / n as f64;
                for i in 0..m {
                    let row = i * n..(i + 1) * n;
                    let (gi, hi) = (&gd[row.clone()], &xhat[row]);
                    let mut mean_dh = 0.0;
                    let mut mean_dh_h = 0.0;
                    for j in 0..n {
                        let dh = gi[j] * gv[j];
                        mean_dh += dh;
                        mean_dh_h += dh * hi[j];
                    }
                    mean_dh *= inv_n;
                    mean_dh_h *= inv_n;
                    for j in 0..n {
                        let dh = gi[j] * gv[j];
                        dx[i * n + j] += rstd[i] * (dh - mean_dh - hi[j] * mean_dh_h);
                    }
                }
            }
        }
        Op::CrossEntropy {
            logits,
            labels,
            probs,
        } => {
            let c = nodes[logits.0].value.cols();
            let s = gd[0] / labels.len() as f64;
            if let Some(dl) = grad_buf(nodes, grads, *logits) {
                for (i, &label) in labels.iter().enumerate() {
                    for j in 0..c {
                        let target = if j == label { 1.0 } else { 0.0 };
                        dl[i * c + j] += s * (probs[i * c + j] - target);
                    }
                }
            }
        }
        Op::GatherRows { src, index } => {
            let n = g.cols();
            if let Some(ds) = grad_buf(nodes, grads, *src) {
                for (r, &i) in index.iter().enumerate() {
                    axpy(1.0, &gd[r * n..(r + 1) * n], &mut ds[i * n..(i + 1) * n]);
                }
            }
        }
        Op::ConcatRows(parts) => {
            let mut offset = 0;
            for p in parts {
                let len = nodes[p.0].value.len();
                if let Some(dp) = grad_buf(nodes, grads, *p) {
                    axpy(1.0, &gd[offset..offset + len], dp);
                }
                offset += len;
            }
        }
        Op::Attention(cache) => attention_backward(nodes, grads, cache, g),
    }
}

fn attention_backward(nodes: &[Node], grads: &mut [Option<Tensor>], c: &AttentionCache, g: &Tensor) {
    let (rows, d) = g.shape();
    let len = c.layout.len;
    let dh = d / c.heads;
    let gd = g.data();
    let qv = nodes[c.q.0].value.data();
    let kv = nodes[c.k.0].value.data();
    let vv = nodes[c.v.0].value.data();

    let mut dq = vec![0.0; rows * d];
    let mut dk = vec![0.0; rows * d];
    let mut dv = vec![0.0; rows * d];
    let mut ds = vec![0.0; len];
    for b in 0..c.layout.batch {
        for h in 0..c.heads {
            let col = h * dh;
            for i in 0..len {
                let p_row = &c.probs[((b * c.heads + h) * len + i) * len..][..len];
                let go = &gd[(b * len + i) * d + col..][..dh];
                // dP_ij = dO_i . V_j ; dV_j += P_ij dO_i
                let mut inner = 0.0;
                for j in 0..len {
                    let p = p_row[j];
                    if p == 0.0 {
                        ds[j] = 0.0;
                        continue;
                    }
                    let off = (b * len + j) * d + col;
                    let dp = dot(go, &vv[off..][..dh]);
                    ds[j] = dp;
                    inner += p * dp;
                    axpy(p, go, &mut dv[off..][..dh]);
                }
                for (s, &p) in ds[..len].iter_mut().zip(&p_row[..len]) {
                    *s = p * (*s - inner) * c.scale;
                }
                let qi_off = (b * len + i) * d + col;
                for (j, &s) in ds[..len].iter().enumerate() {
                    if s == 0.0 {
                        continue;
                    }
                    let kj_off = (b * len + j) * d + col;
                    axpy(s, &kv[kj_off..][..dh], &mut dq[qi_off..][..dh]);
                    axpy(s, &qv[qi_off..][..dh], &mut dk[kj_off..][..dh]);
                }
            }
        }
    }
    for (var, buf) in [(c.q, dq), (c.k, dk), (c.v, dv)] {
        if let Some(dst) = grad_buf(nodes, grads, var) {
            axpy(1.0, &buf, dst);
        }
    }
}
