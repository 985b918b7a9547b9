//! Reverse-mode autodiff over a linear tape.
//!
//! Nodes are appended in construction order, so the tape is topologically
//! sorted by construction; `backward` walks it once in reverse.

use crate::error::{Result, TensorError};
use crate::kernels;
use crate::real::Real;
use crate::tensor::Tensor;

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Sum(Var),
    Softmax {
        x: Var,
        axis: usize,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        mean: Vec<T>,
        rstd: Vec<T>,
    },
    Gelu(Var),
    GatherRows {
        table: Var,
        ids: Vec<usize>,
    },
    ConcatRows(Vec<Var>),
    SliceRows {
        x: Var,
        start: usize,
    },
    MeanRows(Var),
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        probs: Vec<T>,
    },
    CrossEntropy {
        logits: Var,
        rows: Vec<usize>,
        targets: Vec<usize>,
        probs: Vec<T>,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Offset of query row `i` inside a flattened causal attention buffer.
#[inline]
fn attn_offset(i: usize, heads: usize) -> usize {
    heads * i * (i + 1) / 2
}

#[derive(Debug)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
    backward_done: bool,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            backward_done: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn dims2(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        let t = &self.nodes[v.0].value;
        match t.shape() {
            [r, c] => Ok((*r, *c)),
            s => Err(TensorError::InvalidShape {
                op,
                shape: s.to_vec(),
                reason: "expected a 2-D tensor".into(),
            }),
        }
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// Gradient of the last `backward` call with respect to a leaf.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn reset_grads(&mut self) {
        self.grads.clear();
        self.backward_done = false;
    }

    /// Attention weights saved by an [`Graph::attention`] node: one
    /// `heads × (i+1)` block per query row `i`, concatenated.
    pub fn attention_probs(&self, v: Var) -> Option<&[T]> {
        match &self.nodes[v.0].op {
            Op::Attention { probs, .. } => Some(probs),
            _ => None,
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2(a, "matmul")?;
        let (k2, n) = self.dims2(b, "matmul")?;
        if k != k2 {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: vec![m, k],
                rhs: vec![k2, n],
            });
        }
        let out = kernels::matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), rg))
    }

    /// `a · bᵀ` with `a: [m×k]`, `b: [n×k]`.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2(a, "matmul_bt")?;
        let (n, k2) = self.dims2(b, "matmul_bt")?;
        if k != k2 {
            return Err(TensorError::ShapeMismatch {
                op: "matmul_bt",
                lhs: vec![m, k],
                rhs: vec![n, k2],
            });
        }
        let out = kernels::matmul_bt(self.value(a).data(), self.value(b).data(), m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMulBt(a, b), rg))
    }

    fn same_shape(&self, a: Var, b: Var, op: &'static str) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(TensorError::ShapeMismatch {
                op,
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x + y)
            .collect();
        let t = Tensor::new(self.value(a).shape().to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Add(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x * y)
            .collect();
        let t = Tensor::new(self.value(a).shape().to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Mul(a, b), rg))
    }

    /// Adds `bias` (length = last dim of `a`) to every row.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let c = self.value(a).last_dim();
        if self.value(bias).numel() != c {
            return Err(TensorError::ShapeMismatch {
                op: "add_row",
                lhs: self.value(a).shape().to_vec(),
                rhs: self.value(bias).shape().to_vec(),
            });
        }
        let b = self.value(bias).data();
        let mut data = self.value(a).data().to_vec();
        for row in data.chunks_mut(c.max(1)) {
            for (x, &bv) in row.iter_mut().zip(b) {
                *x += bv;
            }
        }
        let t = Tensor::new(self.value(a).shape().to_vec(), data)?;
        let rg = self.rg(a) || self.rg(bias);
        Ok(self.push(t, Op::AddRow(a, bias), rg))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let data = self.value(a).data().iter().map(|&x| x * s).collect();
        let t = Tensor::new(self.value(a).shape().to_vec(), data).expect("same shape");
        let rg = self.rg(a);
        self.push(t, Op::Scale(a, s), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let mut s = T::zero();
        for &x in self.value(a).data() {
            s += x;
        }
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    /// Softmax along `axis`, with max subtraction.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.value(x).shape().to_vec();
        if axis >= shape.len() {
            return Err(TensorError::InvalidShape {
                op: "softmax",
                shape,
                reason: format!("axis {axis} out of range"),
            });
        }
        let (outer, n, inner) = axis_split(&shape, axis);
        let src = self.value(x).data();
        let mut out = vec![T::zero(); src.len()];
        let mut buf_in = vec![T::zero(); n];
        let mut buf_out = vec![T::zero(); n];
        for o in 0..outer {
            for i in 0..inner {
                for j in 0..n {
                    buf_in[j] = src[(o * n + j) * inner + i];
                }
                kernels::softmax_slice(&buf_in, &mut buf_out);
                for j in 0..n {
                    out[(o * n + j) * inner + i] = buf_out[j];
                }
            }
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(shape, out)?, Op::Softmax { x, axis }, rg))
    }

    /// Layer norm over the last axis.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: T) -> Result<Var> {
        let c = self.value(x).last_dim();
        for p in [gain, bias] {
            if self.value(p).numel() != c {
                return Err(TensorError::ShapeMismatch {
                    op: "layer_norm",
                    lhs: self.value(x).shape().to_vec(),
                    rhs: self.value(p).shape().to_vec(),
                });
            }
        }
        let rows = self.value(x).rows();
        let mut out = vec![T::zero(); rows * c];
        let mut mean = Vec::with_capacity(rows);
        let mut rstd = Vec::with_capacity(rows);
        {
            let xs = self.value(x).data();
            let g = self.value(gain).data();
            let b = self.value(bias).data();
            for r in 0..rows {
                let (m, s) = kernels::layer_norm_row(
                    &xs[r * c..(r + 1) * c],
                    g,
                    b,
                    eps,
                    &mut out[r * c..(r + 1) * c],
                );
                mean.push(m);
                rstd.push(s);
            }
        }
        let t = Tensor::new(self.value(x).shape().to_vec(), out)?;
        let rg = self.rg(x) || self.rg(gain) || self.rg(bias);
        Ok(self.push(
            t,
            Op::LayerNorm {
                x,
                gain,
                bias,
                mean,
                rstd,
            },
            rg,
        ))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let data = self.value(x).data().iter().map(|&v| kernels::gelu(v)).collect();
        let t = Tensor::new(self.value(x).shape().to_vec(), data).expect("same shape");
        let rg = self.rg(x);
        self.push(t, Op::Gelu(x), rg)
    }

    /// Selects rows of a 2-D table (embedding lookup, or row picking).
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (rows, c) = self.dims2(table, "gather_rows")?;
        let mut out = Vec::with_capacity(ids.len() * c);
        for &id in ids {
            if id >= rows {
                return Err(TensorError::IndexOutOfRange {
                    op: "gather_rows",
                    index: id,
                    rows,
                });
            }
            out.extend_from_slice(self.value(table).row(id));
        }
        let rg = self.rg(table);
        Ok(self.push(
            Tensor::new(vec![ids.len(), c], out)?,
            Op::GatherRows {
                table,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let mut cols = None;
        let mut total = 0;
        for &p in parts {
            let (r, c) = self.dims2(p, "concat_rows")?;
            match cols {
                None => cols = Some(c),
                Some(c0) if c0 != c => {
                    return Err(TensorError::ShapeMismatch {
                        op: "concat_rows",
                        lhs: vec![total, c0],
                        rhs: vec![r, c],
                    })
                }
                _ => {}
            }
            total += r;
        }
        let c = cols.unwrap_or(0);
        let mut data = Vec::with_capacity(total * c);
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(
            Tensor::new(vec![total, c], data)?,
            Op::ConcatRows(parts.to_vec()),
            rg,
        ))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (r, _) = self.dims2(x, "slice_rows")?;
        if start > end || end > r {
            return Err(TensorError::IndexOutOfRange {
                op: "slice_rows",
                index: end,
                rows: r,
            });
        }
        let t = self.value(x).slice_rows(start, end);
        let rg = self.rg(x);
        Ok(self.push(t, Op::SliceRows { x, start }, rg))
    }

    /// Arithmetic mean over rows: `[T×d] -> [d]`.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.dims2(x, "mean_rows")?;
        if r == 0 {
            return Err(TensorError::InvalidShape {
                op: "mean_rows",
                shape: vec![r, c],
                reason: "no rows to pool".into(),
            });
        }
        let mut out = vec![T::zero(); c];
        for i in 0..r {
            for (o, &v) in out.iter_mut().zip(self.value(x).row(i)) {
                *o += v;
            }
        }
        let inv = T::one() / T::lit(r as f64);
        for o in &mut out {
            *o *= inv;
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(vec![c], out)?, Op::MeanRows(x), rg))
    }

    /// Causal multi-head scaled dot-product attention over `[T×d]` inputs.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize) -> Result<Var> {
        let (t, d) = self.dims2(q, "attention")?;
        for other in [k, v] {
            if self.value(other).shape() != [t, d] {
                return Err(TensorError::ShapeMismatch {
                    op: "attention",
                    lhs: vec![t, d],
                    rhs: self.value(other).shape().to_vec(),
                });
            }
        }
        if heads == 0 || d % heads != 0 {
            return Err(TensorError::InvalidShape {
                op: "attention",
                shape: vec![t, d],
                reason: format!("width not divisible by {heads} heads"),
            });
        }
        let mut out = vec![T::zero(); t * d];
        let mut probs = vec![T::zero(); attn_offset(t, heads)];
        {
            let qd = self.value(q).data();
            let kd = self.value(k).data();
            let vd = self.value(v).data();
            for i in 0..t {
                let off = attn_offset(i, heads);
                kernels::attention_row(
                    &qd[i * d..(i + 1) * d],
                    kd,
                    vd,
                    i,
                    d,
                    heads,
                    &mut out[i * d..(i + 1) * d],
                    &mut probs[off..off + heads * (i + 1)],
                );
            }
        }
        let rg = self.rg(q) || self.rg(k) || self.rg(v);
        Ok(self.push(
            Tensor::new(vec![t, d], out)?,
            Op::Attention {
                q,
                k,
                v,
                heads,
                probs,
            },
            rg,
        ))
    }

    /// Mean negative log-likelihood of `targets` over the unmasked rows of
    /// `logits`.
    pub fn cross_entropy_masked(
        &mut self,
        logits: Var,
        targets: &[usize],
        mask: &[bool],
    ) -> Result<Var> {
        let (t, vocab) = self.dims2(logits, "cross_entropy_masked")?;
        if targets.len() != t || mask.len() != t {
            return Err(TensorError::ShapeMismatch {
                op: "cross_entropy_masked",
                lhs: vec![t, vocab],
                rhs: vec![targets.len(), mask.len()],
            });
        }
        let rows: Vec<usize> = (0..t).filter(|&i| mask[i]).collect();
        if rows.is_empty() {
            return Err(TensorError::EmptySupervision);
        }
        let mut probs = vec![T::zero(); rows.len() * vocab];
        let mut tg = Vec::with_capacity(rows.len());
        let mut nll = T::zero();
        for (slot, &r) in rows.iter().enumerate() {
            let target = targets[r];
            if target >= vocab {
                return Err(TensorError::IndexOutOfRange {
                    op: "cross_entropy_masked",
                    index: target,
                    rows: vocab,
                });
            }
            let lrow = self.value(logits).row(r);
            let p = &mut probs[slot * vocab..(slot + 1) * vocab];
            kernels::softmax_slice(lrow, p);
            // log p(target) via log-sum-exp for accuracy
            let mut max = T::neg_infinity();
            for &v in lrow {
                if v > max {
                    max = v;
                }
            }
            let mut s = T::zero();
            for &v in lrow {
                s += (v - max).exp();
            }
            nll += -(lrow[target] - max - s.ln());
            tg.push(target);
        }
        let loss = nll / T::lit(rows.len() as f64);
        let rg = self.rg(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                rows,
                targets: tg,
                probs,
            },
            rg,
        ))
    }

    /// Populates gradients of `loss` with respect to every node that
    /// requires them. Errors on a non-scalar loss or a repeated call.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(TensorError::BackwardTwice);
        }
        let shape = self.value(loss).shape().to_vec();
        if self.value(loss).numel() != 1 {
            return Err(TensorError::NonScalarLoss(shape));
        }
        self.backward_done = true;
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        if !self.rg(loss) {
            return Ok(());
        }
        self.grads[loss.0] = Some(vec![T::one()]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = self.grads[idx].take() else {
                continue;
            };
            if !self.nodes[idx].requires_grad {
                continue;
            }
            if matches!(self.nodes[idx].op, Op::Leaf) {
                self.grads[idx] = Some(g);
                continue;
            }
            self.backprop_node(idx, &g);
        }
        Ok(())
    }

    fn backprop_node(&mut self, idx: usize, g: &[T]) {
        // Split borrows: nodes are only read below, grads only written.
        let nodes = std::mem::take(&mut self.nodes);
        let node = &nodes[idx];
        let val = |v: Var| &nodes[v.0].value;
        {
            let mut acc = |v: Var, f: &dyn Fn(&mut [T])| {
                if nodes[v.0].requires_grad {
                    let n = nodes[v.0].value.numel();
                    let buf = self.grads[v.0].get_or_insert_with(|| vec![T::zero(); n]);
                    f(buf);
                }
            };
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let (m, k) = dims(val(*a));
                    let n = val(*b).last_dim();
                    acc(*a, &|buf| kernels::matmul_bt_acc(buf, g, val(*b).data(), m, k, n));
                    acc(*b, &|buf| kernels::matmul_at_acc(buf, val(*a).data(), g, m, k, n));
                }
                Op::MatMulBt(a, b) => {
                    // c = a·bᵀ;  da = g·b;  db = gᵀ·a
                    let (m, k) = dims(val(*a));
                    let n = val(*b).rows();
                    acc(*a, &|buf| kernels::matmul_acc(buf, g, val(*b).data(), m, k, n));
                    acc(*b, &|buf| kernels::matmul_at_acc(buf, g, val(*a).data(), m, n, k));
                }
                Op::Add(a, b) => {
                    acc(*a, &|buf| add_into(buf, g));
                    acc(*b, &|buf| add_into(buf, g));
                }
                Op::AddRow(a, bias) => {
                    acc(*a, &|buf| add_into(buf, g));
                    let c = val(*bias).numel();
                    acc(*bias, &|buf| {
                        for row in g.chunks(c) {
                            add_into(buf, row);
                        }
                    });
                }
                Op::Mul(a, b) => {
                    acc(*a, &|buf| {
                        for ((o, &gv), &bv) in buf.iter_mut().zip(g).zip(val(*b).data()) {
                            *o += gv * bv;
                        }
                    });
                    acc(*b, &|buf| {
                        for ((o, &gv), &av) in buf.iter_mut().zip(g).zip(val(*a).data()) {
                            *o += gv * av;
                        }
                    });
                }
                Op::Scale(a, s) => {
                    acc(*a, &|buf| {
                        for (o, &gv) in buf.iter_mut().zip(g) {
                            *o += gv * *s;
                        }
                    });
                }
                Op::Sum(a) => {
                    acc(*a, &|buf| {
                        for o in buf.iter_mut() {
                            *o += g[0];
                        }
                    });
                }
                Op::Softmax { x, axis } => {
                    let y = node.value.data();
                    let (outer, n, inner) = axis_split(node.value.shape(), *axis);
                    acc(*x, &|buf| {
                        for o in 0..outer {
                            for i in 0..inner {
                                let at = |j: usize| (o * n + j) * inner + i;
                                let mut s = T::zero();
                                for j in 0..n {
                                    s += g[at(j)] * y[at(j)];
                                }
                                for j in 0..n {
                                    buf[at(j)] += y[at(j)] * (g[at(j)] - s);
                                }
                            }
                        }
                    });
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    mean,
                    rstd,
                } => {
                    let xs = val(*x).data();
                    let gn = val(*gain).data();
                    let c = gn.len();
                    let rows = mean.len();
                    let xhat = |r: usize, i: usize| (xs[r * c + i] - mean[r]) * rstd[r];
                    acc(*x, &|buf| {
                        let nf = T::lit(c as f64);
                        for r in 0..rows {
                            let mut m1 = T::zero();
                            let mut m2 = T::zero();
                            for i in 0..c {
                                let dxh = g[r * c + i] * gn[i];
                                m1 += dxh;
                                m2 += dxh * xhat(r, i);
                            }
                            m1 /= nf;
                            m2 /= nf;
                            for i in 0..c {
                                let dxh = g[r * c + i] * gn[i];
                                buf[r * c + i] += rstd[r] * (dxh - m1 - xhat(r, i) * m2);
                            }
                        }
                    });
                    acc(*gain, &|buf| {
                        for r in 0..rows {
                            for i in 0..c {
                                buf[i] += g[r * c + i] * xhat(r, i);
                            }
                        }
                    });
                    acc(*bias, &|buf| {
                        for row in g.chunks(c) {
                            add_into(buf, row);
                        }
                    });
                }
                Op::Gelu(x) => {
                    acc(*x, &|buf| {
                        for ((o, &gv), &xv) in buf.iter_mut().zip(g).zip(val(*x).data()) {
                            *o += gv * kernels::gelu_grad(xv);
                        }
                    });
                }
                Op::GatherRows { table, ids } => {
                    let c = val(*table).last_dim();
                    acc(*table, &|buf| {
                        for (r, &id) in ids.iter().enumerate() {
                            add_into(&mut buf[id * c..(id + 1) * c], &g[r * c..(r + 1) * c]);
                        }
                    });
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let n = val(p).numel();
                        acc(p, &|buf| add_into(buf, &g[off..off + n]));
                        off += n;
                    }
                }
                Op::SliceRows { x, start } => {
                    let c = val(*x).last_dim();
                    acc(*x, &|buf| add_into(&mut buf[start * c..start * c + g.len()], g));
                }
                Op::MeanRows(x) => {
                    let (r, c) = dims(val(*x));
                    let inv = T::one() / T::lit(r as f64);
                    acc(*x, &|buf| {
                        for i in 0..r {
                            for j in 0..c {
                                buf[i * c + j] += g[j] * inv;
                            }
                        }
                    });
                }
                Op::Attention {
                    q,
                    k,
                    v,
                    heads,
                    probs,
                } => {
                    let (t, d) = dims(val(*q));
                    let (dq, dk, dv) = attention_backward(
                        val(*q).data(),
                        val(*k).data(),
                        val(*v).data(),
                        probs,
                        g,
                        t,
                        d,
                        *heads,
                    );
                    acc(*q, &|buf| add_into(buf, &dq));
                    acc(*k, &|buf| add_into(buf, &dk));
                    acc(*v, &|buf| add_into(buf, &dv));
                }
                Op::CrossEntropy {
                    logits,
                    rows,
                    targets,
                    probs,
                } => {
                    let vocab = val(*logits).last_dim();
                    let scale = g[0] / T::lit(rows.len() as f64);
                    acc(*logits, &|buf| {
                        for (slot, (&r, &tg)) in rows.iter().zip(targets).enumerate() {
                            let p = &probs[slot * vocab..(slot + 1) * vocab];
                            let out = &mut buf[r * vocab..(r + 1) * vocab];
                            for (j, (o, &pj)) in out.iter_mut().zip(p).enumerate() {
                                let y = if j == tg { T::one() } else { T::zero() };
                                *o += (pj - y) * scale;
                            }
                        }
                    });
                }
            }
        }
        self.nodes = nodes;
    }
}

fn dims<T: Real>(t: &Tensor<T>) -> (usize, usize) {
    (t.rows(), t.last_dim())
}

fn add_into<T: Real>(buf: &mut [T], g: &[T]) {
    for (o, &v) in buf.iter_mut().zip(g) {
        *o += v;
    }
}

fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let n = shape[axis];
    let inner = shape[axis + 1..].iter().product();
    (outer, n, inner)
}

#[allow(clippy::too_many_arguments)]
fn attention_backward<T: Real>(
    q: &[T],
    k: &[T],
    v: &[T],
    probs: &[T],
    g: &[T],
    t: usize,
    d: usize,
    heads: usize,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let dh = d / heads;
    let scale = T::one() / T::lit(dh as f64).sqrt();
    let mut dq = vec![T::zero(); t * d];
    let mut dk = vec![T::zero(); t * d];
    let mut dv = vec![T::zero(); t * d];
    let mut dp = vec![T::zero(); t];
    for i in 0..t {
        let len = i + 1;
        let off = attn_offset(i, heads);
        for h in 0..heads {
            let hs = h * dh..(h + 1) * dh;
            let p = &probs[off + h * len..off + (h + 1) * len];
            let go = &g[i * d + hs.start..i * d + hs.end];
            let mut s = T::zero();
            for j in 0..len {
                let vj = &v[j * d + hs.start..j * d + hs.end];
                dp[j] = kernels::dot(go, vj);
                s += p[j] * dp[j];
                kernels::axpy(&mut dv[j * d + hs.start..j * d + hs.end], p[j], go);
            }
            for j in 0..len {
                let ds = p[j] * (dp[j] - s) * scale;
                if ds == T::zero() {
                    continue;
                }
                let (qrow, krow) = (&q[i * d + hs.start..i * d + hs.end], &k[j * d + hs.start..j * d + hs.end]);
                kernels::axpy(&mut dq[i * d + hs.start..i * d + hs.end], ds, krow);
                kernels::axpy(&mut dk[j * d + hs.start..j * d + hs.end], ds, qrow);
            }
        }
    }
    (dq, dk, dv)
}
