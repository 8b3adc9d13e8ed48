//! A small reverse-mode tape over 2-D row-major tensors.
//!
//! Every op appends a node holding its output value and whatever it needs
//! for the backward pass. [`Graph::backward`] walks the tape in reverse and
//! accumulates gradients into every node that depends on a leaf created with
//! `requires_grad`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddBias(Var, Var),
    Mul(Var, Var),
    Transpose(Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Gelu(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<f64>,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    SliceRows {
        x: Var,
        start: usize,
    },
    ConcatRows(Vec<Var>),
    Dropout {
        x: Var,
        mask: Vec<f64>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        seq: usize,
        probs: Vec<f64>,
    },
    WeightedSum {
        x: Var,
        weights: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Computation tape. Graphs built with [`Graph::training`] apply dropout;
/// [`Graph::new`] builds an evaluation graph where dropout is the identity.
#[derive(Debug)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    training: bool,
    rng: ChaCha8Rng,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

/// `c (+)= op(a) · op(b)` for row-major matrices; `op` optionally transposes.
/// `a` is `m×k` after `op`, `b` is `k×n` after `op`, `c` is `m×n`.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c.fill(0.0);
        }
        return;
    }
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the strides describe exactly the m×k, k×n and m×n row-major
    // buffers whose lengths are asserted above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
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

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

/// Row-wise softmax of a `rows × cols` buffer, in place.
pub(crate) fn softmax_rows(data: &mut [f64], cols: usize) {
    for row in data.chunks_mut(cols) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for x in row.iter_mut() {
            *x = (*x - max).exp();
            sum += *x;
        }
        for x in row.iter_mut() {
            *x /= sum;
        }
    }
}

fn same_shape(what: &str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "{what}: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

fn matrix_dims(what: &str, t: &Tensor) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        s => Err(Error::Shape(format!("{what} expects a matrix, got {s:?}"))),
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            grads: Vec::new(),
            training: false,
            rng: ChaCha8Rng::seed_from_u64(0),
        }
    }

    /// A graph that applies dropout, drawing masks from `seed`.
    pub fn training(seed: u64) -> Self {
        Graph {
            training: true,
            rng: ChaCha8Rng::seed_from_u64(seed),
            ..Graph::new()
        }
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Adds an input. Parameters use `requires_grad = true`.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Gradient of the last `backward` loss with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = matrix_dims("matmul lhs", self.value(a))?;
        let (k2, n) = matrix_dims("matmul rhs", self.value(b))?;
        if k != k2 {
            return Err(Error::Shape(format!("matmul [{m},{k}]·[{k2},{n}]")));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a).data(), false, self.value(b).data(), false, &mut out, false);
        Ok(self.push(Tensor::new(&[m, n], out)?, Op::MatMul(a, b), &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("add", self.value(a), self.value(b))?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.value(a).shape().to_vec();
        Ok(self.push(Tensor::new(&shape, data)?, Op::Add(a, b), &[a, b]))
    }

    /// Adds a length-`n` bias to every row of an `m × n` matrix.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (_, n) = matrix_dims("add_bias", self.value(x))?;
        if self.value(bias).len() != n {
            return Err(Error::Shape(format!(
                "bias of {} for {n} columns",
                self.value(bias).len()
            )));
        }
        let b = self.value(bias).data().to_vec();
        let mut out = self.value(x).clone();
        for row in out.data_mut().chunks_mut(n) {
            for (o, bb) in row.iter_mut().zip(&b) {
                *o += bb;
            }
        }
        Ok(self.push(out, Op::AddBias(x, bias), &[x, bias]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("mul", self.value(a), self.value(b))?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.value(a).shape().to_vec();
        Ok(self.push(Tensor::new(&shape, data)?, Op::Mul(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (r, c) = matrix_dims("transpose", self.value(x))?;
        let src = self.value(x).data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = src[i * c + j];
            }
        }
        Ok(self.push(Tensor::new(&[c, r], out)?, Op::Transpose(x), &[x]))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let mut out = self.value(x).clone();
        out.data_mut().iter_mut().for_each(|v| *v *= factor);
        self.push(out, Op::Scale(x, factor), &[x])
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let mut out = self.value(x).clone();
        out.data_mut().iter_mut().for_each(|v| *v = f(*v));
        self.push(out, op, &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, f64::tanh, Op::Tanh(x))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Var {
        self.unary(x, gelu, Op::Gelu(x))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        if !self.value(x).is_finite() {
            return Err(Error::NanPropagation("softmax"));
        }
        let (_, cols) = self.value(x).rows_cols();
        let mut out = self.value(x).clone();
        softmax_rows(out.data_mut(), cols);
        Ok(self.push(out, Op::Softmax(x), &[x]))
    }

    /// Normalizes each row to zero mean and unit variance, then applies
    /// `gain` and `bias` (both of row length).
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (rows, cols) = self.value(x).rows_cols();
        if self.value(gain).len() != cols || self.value(bias).len() != cols {
            return Err(Error::Shape(format!("layer_norm affine params must have {cols} elements")));
        }
        let xs = self.value(x).data();
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let mut xhat = vec![0.0; rows * cols];
        let mut rstd = vec![0.0; rows];
        let mut out = vec![0.0; rows * cols];
        for r in 0..rows {
            let row = &xs[r * cols..(r + 1) * cols];
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / cols as f64;
            let rs = 1.0 / (var + eps).sqrt();
            rstd[r] = rs;
            for c in 0..cols {
                let h = (row[c] - mean) * rs;
                xhat[r * cols + c] = h;
                out[r * cols + c] = h * g[c] + b[c];
            }
        }
        let shape = self.value(x).shape().to_vec();
        Ok(self.push(
            Tensor::new(&shape, out)?,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            &[x, gain, bias],
        ))
    }

    /// Row gather: output row `i` is `table[ids[i]]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (vocab, dim) = matrix_dims("embedding table", self.value(table))?;
        let t = self.value(table).data();
        let mut out = Vec::with_capacity(ids.len() * dim);
        for &id in ids {
            if id >= vocab {
                return Err(Error::Range {
                    index: id,
                    size: vocab,
                });
            }
            out.extend_from_slice(&t[id * dim..(id + 1) * dim]);
        }
        Ok(self.push(
            Tensor::new(&[ids.len(), dim], out)?,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            &[table],
        ))
    }

    /// Mean over rows of `-log softmax(logits)[row, target]`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (rows, vocab) = matrix_dims("cross_entropy logits", self.value(logits))?;
        if targets.len() != rows {
            return Err(Error::Shape(format!("{} targets for {rows} rows", targets.len())));
        }
        if let Some(&t) = targets.iter().find(|&&t| t >= vocab) {
            return Err(Error::Range { index: t, size: vocab });
        }
        if !self.value(logits).is_finite() {
            return Err(Error::NanPropagation("cross_entropy"));
        }
        let mut probs = self.value(logits).data().to_vec();
        let mut loss = 0.0;
        for (r, row) in probs.chunks_mut(vocab).enumerate() {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss += lse - row[targets[r]];
            for v in row.iter_mut() {
                *v = (*v - lse).exp();
            }
        }
        let loss = if rows > 0 { loss / rows as f64 } else { 0.0 };
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            &[logits],
        ))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (rows, cols) = matrix_dims("slice_cols", self.value(x))?;
        if start + len > cols {
            return Err(Error::Shape(format!("columns {start}..{} of {cols}", start + len)));
        }
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(rows * len);
        for r in 0..rows {
            out.extend_from_slice(&src[r * cols + start..r * cols + start + len]);
        }
        Ok(self.push(Tensor::new(&[rows, len], out)?, Op::SliceCols { x, start }, &[x]))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let dims = parts
            .iter()
            .map(|p| matrix_dims("concat_cols", self.value(*p)))
            .collect::<Result<Vec<_>>>()?;
        let rows = dims.first().map_or(0, |d| d.0);
        if dims.iter().any(|d| d.0 != rows) {
            return Err(Error::Shape("concat_cols row counts differ".into()));
        }
        let total: usize = dims.iter().map(|d| d.1).sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (p, (_, c)) in parts.iter().zip(&dims) {
                out.extend_from_slice(&self.value(*p).data()[r * c..(r + 1) * c]);
            }
        }
        Ok(self.push(Tensor::new(&[rows, total], out)?, Op::ConcatCols(parts.to_vec()), parts))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (rows, cols) = matrix_dims("slice_rows", self.value(x))?;
        if start + len > rows {
            return Err(Error::Shape(format!("rows {start}..{} of {rows}", start + len)));
        }
        let out = self.value(x).data()[start * cols..(start + len) * cols].to_vec();
        Ok(self.push(Tensor::new(&[len, cols], out)?, Op::SliceRows { x, start }, &[x]))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let dims = parts
            .iter()
            .map(|p| matrix_dims("concat_rows", self.value(*p)))
            .collect::<Result<Vec<_>>>()?;
        let cols = dims.first().map_or(0, |d| d.1);
        if dims.iter().any(|d| d.1 != cols) {
            return Err(Error::Shape("concat_rows column counts differ".into()));
        }
        let rows: usize = dims.iter().map(|d| d.0).sum();
        let mut out = Vec::with_capacity(rows * cols);
        for p in parts {
            out.extend_from_slice(self.value(*p).data());
        }
        Ok(self.push(Tensor::new(&[rows, cols], out)?, Op::ConcatRows(parts.to_vec()), parts))
    }

    /// Inverted dropout; the identity in evaluation graphs or when `rate` is 0.
    pub fn dropout(&mut self, x: Var, rate: f64) -> Var {
        if !self.training || rate <= 0.0 {
            return x;
        }
        let keep = 1.0 - rate;
        let n = self.value(x).len();
        let mask: Vec<f64> = (0..n)
            .map(|_| if self.rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let mut out = self.value(x).clone();
        out.data_mut().iter_mut().zip(&mask).for_each(|(o, m)| *o *= m);
        self.push(out, Op::Dropout { x, mask }, &[x])
    }

    /// Multi-head causal attention core. `q`, `k`, `v` are `[B·T, d]` with
    /// rows ordered sequence-major (`b·T + t`). Each head attends over its
    /// `d/heads` slice of columns; position `t` sees positions `≤ t` of its
    /// own sequence. Output rows are the heads' weighted sums, concatenated.
    pub fn causal_attention(&mut self, q: Var, k: Var, v: Var, heads: usize, seq: usize) -> Result<Var> {
        let (rows, d) = matrix_dims("attention q", self.value(q))?;
        same_shape("attention k", self.value(q), self.value(k))?;
        same_shape("attention v", self.value(q), self.value(v))?;
        if heads == 0 || d % heads != 0 {
            return Err(Error::Shape(format!("{d} columns not divisible into {heads} heads")));
        }
        if seq == 0 || rows % seq != 0 {
            return Err(Error::Shape(format!("{rows} rows not a multiple of sequence length {seq}")));
        }
        let batch = rows / seq;
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let (qs, ks, vs) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let mut probs = vec![0.0; batch * heads * seq * seq];
        let mut out = vec![0.0; rows * d];
        for b in 0..batch {
            for h in 0..heads {
                let off = h * dh;
                let p = &mut probs[(b * heads + h) * seq * seq..(b * heads + h + 1) * seq * seq];
                for t in 0..seq {
                    let qrow = &qs[(b * seq + t) * d + off..(b * seq + t) * d + off + dh];
                    let prow = &mut p[t * seq..(t + 1) * seq];
                    let mut max = f64::NEG_INFINITY;
                    for s in 0..=t {
                        let krow = &ks[(b * seq + s) * d + off..(b * seq + s) * d + off + dh];
                        let dot: f64 = qrow.iter().zip(krow).map(|(a, b)| a * b).sum();
                        prow[s] = dot * scale;
                        max = max.max(prow[s]);
                    }
                    let mut sum = 0.0;
                    for s in 0..=t {
                        prow[s] = (prow[s] - max).exp();
                        sum += prow[s];
                    }
                    let orow = &mut out[(b * seq + t) * d + off..(b * seq + t) * d + off + dh];
                    for s in 0..=t {
                        prow[s] /= sum;
                        let vrow = &vs[(b * seq + s) * d + off..(b * seq + s) * d + off + dh];
                        for (o, vv) in orow.iter_mut().zip(vrow) {
                            *o += prow[s] * vv;
                        }
                    }
                }
            }
        }
        if !out.iter().all(|x| x.is_finite()) {
            return Err(Error::NanPropagation("attention"));
        }
        Ok(self.push(
            Tensor::new(&[rows, d], out)?,
            Op::Attention {
                q,
                k,
                v,
                heads,
                seq,
                probs,
            },
            &[q, k, v],
        ))
    }

    /// `Σ x ⊙ weights`, a scalar. Handy for probing gradients.
    pub fn weighted_sum(&mut self, x: Var, weights: &[f64]) -> Result<Var> {
        if weights.len() != self.value(x).len() {
            return Err(Error::Shape(format!(
                "{} weights for {} elements",
                weights.len(),
                self.value(x).len()
            )));
        }
        let s = self.value(x).data().iter().zip(weights).map(|(a, b)| a * b).sum();
        Ok(self.push(
            Tensor::scalar(s),
            Op::WeightedSum {
                x,
                weights: weights.to_vec(),
            },
            &[x],
        ))
    }

    /// Back-propagates from a scalar `loss`, replacing any previous gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::Shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = self.grads[i].take() else { continue };
            if self.nodes[i].requires_grad {
                self.propagate(i, &g);
            }
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, f: impl FnOnce(&mut [f64], &Graph)) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let mut g = self.grads[v.0]
            .take()
            .unwrap_or_else(|| vec![0.0; self.nodes[v.0].value.len()]);
        f(&mut g, self);
        self.grads[v.0] = Some(g);
    }

    fn propagate(&mut self, i: usize, g: &[f64]) {
        // move the op out so `self` can be borrowed mutably while reading it
        let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
        match &op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.value(*a).rows_cols();
                let (_, n) = self.value(*b).rows_cols();
                self.accumulate(*a, |ga, s| {
                    gemm(m, n, k, g, false, s.value(*b).data(), true, ga, true)
                });
                self.accumulate(*b, |gb, s| {
                    gemm(k, m, n, s.value(*a).data(), true, g, false, gb, true)
                });
            }
            Op::Add(a, b) => {
                for x in [*a, *b] {
                    self.accumulate(x, |gx, _| gx.iter_mut().zip(g).for_each(|(o, d)| *o += d));
                }
            }
            Op::AddBias(x, bias) => {
                self.accumulate(*x, |gx, _| gx.iter_mut().zip(g).for_each(|(o, d)| *o += d));
                self.accumulate(*bias, |gb, _| {
                    let n = gb.len();
                    for row in g.chunks(n) {
                        gb.iter_mut().zip(row).for_each(|(o, d)| *o += d);
                    }
                });
            }
            Op::Mul(a, b) => {
                let (a, b) = (*a, *b);
                self.accumulate(a, |ga, s| {
                    for ((o, d), y) in ga.iter_mut().zip(g).zip(s.value(b).data()) {
                        *o += d * y;
                    }
                });
                self.accumulate(b, |gb, s| {
                    for ((o, d), y) in gb.iter_mut().zip(g).zip(s.value(a).data()) {
                        *o += d * y;
                    }
                });
            }
            Op::Transpose(x) => {
                let (r, c) = self.value(*x).rows_cols();
                self.accumulate(*x, |gx, _| {
                    for i in 0..r {
                        for j in 0..c {
                            gx[i * c + j] += g[j * r + i];
                        }
                    }
                });
            }
            Op::Scale(x, f) => {
                let f = *f;
                self.accumulate(*x, |gx, _| gx.iter_mut().zip(g).for_each(|(o, d)| *o += d * f));
            }
            Op::Sigmoid(x) => {
                let y = self.nodes[i].value.data().to_vec();
                self.accumulate(*x, |gx, _| {
                    for ((o, d), y) in gx.iter_mut().zip(g).zip(&y) {
                        *o += d * y * (1.0 - y);
                    }
                });
            }
            Op::Tanh(x) => {
                let y = self.nodes[i].value.data().to_vec();
                self.accumulate(*x, |gx, _| {
                    for ((o, d), y) in gx.iter_mut().zip(g).zip(&y) {
                        *o += d * (1.0 - y * y);
                    }
                });
            }
            Op::Gelu(x) => {
                let x = *x;
                self.accumulate(x, |gx, s| {
                    for ((o, d), xv) in gx.iter_mut().zip(g).zip(s.value(x).data()) {
                        *o += d * gelu_grad(*xv);
                    }
                });
            }
            Op::Softmax(x) => {
                let y = self.nodes[i].value.data().to_vec();
                let (_, cols) = self.nodes[i].value.rows_cols();
                self.accumulate(*x, |gx, _| {
                    for ((go, dy), yy) in gx.chunks_mut(cols).zip(g.chunks(cols)).zip(y.chunks(cols)) {
                        let dot: f64 = dy.iter().zip(yy).map(|(a, b)| a * b).sum();
                        for c in 0..cols {
                            go[c] += yy[c] * (dy[c] - dot);
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let cols = self.value(*gain).len();
                let gv = self.value(*gain).data().to_vec();
                self.accumulate(*x, |gx, _| {
                    for (r, rs) in rstd.iter().enumerate() {
                        let dy = &g[r * cols..(r + 1) * cols];
                        let xh = &xhat[r * cols..(r + 1) * cols];
                        let dxhat: Vec<f64> = dy.iter().zip(&gv).map(|(a, b)| a * b).collect();
                        let m1 = dxhat.iter().sum::<f64>() / cols as f64;
                        let m2 = dxhat.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / cols as f64;
                        for c in 0..cols {
                            gx[r * cols + c] += rs * (dxhat[c] - m1 - xh[c] * m2);
                        }
                    }
                });
                self.accumulate(*gain, |gg, _| {
                    for (dy, xh) in g.chunks(cols).zip(xhat.chunks(cols)) {
                        for c in 0..cols {
                            gg[c] += dy[c] * xh[c];
                        }
                    }
                });
                self.accumulate(*bias, |gb, _| {
                    for dy in g.chunks(cols) {
                        gb.iter_mut().zip(dy).for_each(|(o, d)| *o += d);
                    }
                });
            }
            Op::Gather { table, ids } => {
                let (_, dim) = self.value(*table).rows_cols();
                self.accumulate(*table, |gt, _| {
                    for (r, &id) in ids.iter().enumerate() {
                        for c in 0..dim {
                            gt[id * dim + c] += g[r * dim + c];
                        }
                    }
                });
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let rows = targets.len();
                let vocab = if rows > 0 { probs.len() / rows } else { 0 };
                let scale = g[0] / rows.max(1) as f64;
                self.accumulate(*logits, |gl, _| {
                    for (r, &t) in targets.iter().enumerate() {
                        for c in 0..vocab {
                            let onehot = if c == t { 1.0 } else { 0.0 };
                            gl[r * vocab + c] += scale * (probs[r * vocab + c] - onehot);
                        }
                    }
                });
            }
            Op::SliceCols { x, start } => {
                let (_, cols) = self.value(*x).rows_cols();
                let (rows, len) = self.nodes[i].value.rows_cols();
                let start = *start;
                self.accumulate(*x, |gx, _| {
                    for r in 0..rows {
                        for c in 0..len {
                            gx[r * cols + start + c] += g[r * len + c];
                        }
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let (rows, total) = self.nodes[i].value.rows_cols();
                let mut offset = 0;
                for p in parts {
                    let (_, c) = self.value(*p).rows_cols();
                    self.accumulate(*p, |gp, _| {
                        for r in 0..rows {
                            for j in 0..c {
                                gp[r * c + j] += g[r * total + offset + j];
                            }
                        }
                    });
                    offset += c;
                }
            }
            Op::SliceRows { x, start } => {
                let (_, cols) = self.value(*x).rows_cols();
                let base = start * cols;
                self.accumulate(*x, |gx, _| {
                    gx[base..base + g.len()].iter_mut().zip(g).for_each(|(o, d)| *o += d);
                });
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let n = self.value(*p).len();
                    self.accumulate(*p, |gp, _| {
                        gp.iter_mut().zip(&g[offset..offset + n]).for_each(|(o, d)| *o += d);
                    });
                    offset += n;
                }
            }
            Op::Dropout { x, mask } => {
                self.accumulate(*x, |gx, _| {
                    for ((o, d), m) in gx.iter_mut().zip(g).zip(mask) {
                        *o += d * m;
                    }
                });
            }
            Op::Attention {
                q,
                k,
                v,
                heads,
                seq,
                probs,
            } => self.attention_backward(*q, *k, *v, *heads, *seq, probs, g),
            Op::WeightedSum { x, weights } => {
                let s = g[0];
                self.accumulate(*x, |gx, _| {
                    gx.iter_mut().zip(weights).for_each(|(o, w)| *o += s * w);
                });
            }
        }
        self.nodes[i].op = op;
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(&mut self, q: Var, k: Var, v: Var, heads: usize, seq: usize, probs: &[f64], g: &[f64]) {
        let (rows, d) = self.value(q).rows_cols();
        let batch = rows / seq;
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut gq = vec![0.0; rows * d];
        let mut gk = vec![0.0; rows * d];
        let mut gv = vec![0.0; rows * d];
        {
            let (qs, ks, vs) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
            let mut dscore = vec![0.0; seq];
            for b in 0..batch {
                for h in 0..heads {
                    let off = h * dh;
                    let p = &probs[(b * heads + h) * seq * seq..(b * heads + h + 1) * seq * seq];
                    for t in 0..seq {
                        let trow = (b * seq + t) * d + off;
                        let dout = &g[trow..trow + dh];
                        let prow = &p[t * seq..(t + 1) * seq];
                        let mut dot = 0.0;
                        for s in 0..=t {
                            let srow = (b * seq + s) * d + off;
                            let dp: f64 = dout.iter().zip(&vs[srow..srow + dh]).map(|(a, b)| a * b).sum();
                            dscore[s] = dp;
                            dot += prow[s] * dp;
                            for j in 0..dh {
                                gv[srow + j] += prow[s] * dout[j];
                            }
                        }
                        for s in 0..=t {
                            let ds = prow[s] * (dscore[s] - dot) * scale;
                            let srow = (b * seq + s) * d + off;
                            for j in 0..dh {
                                gq[trow + j] += ds * ks[srow + j];
                                gk[srow + j] += ds * qs[trow + j];
                            }
                        }
                    }
                }
            }
        }
        for (x, gx) in [(q, gq), (k, gk), (v, gv)] {
            self.accumulate(x, |acc, _| acc.iter_mut().zip(&gx).for_each(|(o, d)| *o += d));
        }
    }
}
