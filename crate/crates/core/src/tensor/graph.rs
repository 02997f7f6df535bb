//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation as a node in creation order, which is
//! already a topological order: a node can only reference nodes created
//! before it. [`Graph::backward`] walks the tape once in reverse and
//! accumulates gradients into the leaves that asked for them.

use std::rc::Rc;

use super::array::Tensor;
use super::kernels::{self, ConvGeom, MatRef, Window};
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    Same,
    Valid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Unary {
    Relu,
    Tanh,
    Sigmoid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Binary {
    Add,
    Sub,
    Mul,
}

/// Batch statistics observed by a training-mode batch normalization.
#[derive(Clone, Debug)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    Binary(Binary, Var, Var),
    /// Broadcast over the last axis.
    RowBinary(Binary, Var, Var),
    Scale(Var, f64),
    Mask(Var, Rc<Vec<f64>>),
    Unary(Unary, Var),
    Conv1d {
        input: Var,
        filters: Var,
        geom: ConvGeom,
    },
    MaxPool {
        input: Var,
        argmax: Vec<usize>,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Concat {
        parts: Vec<Var>,
        axis: usize,
    },
    Reshape(Var),
    Gather {
        input: Var,
        rows: Vec<usize>,
    },
    Narrow {
        input: Var,
        start: usize,
        len: usize,
    },
    SoftmaxXent {
        logits: Var,
        probs: Vec<f64>,
        targets: Vec<usize>,
    },
    Sum(Var),
    SumSquares(Var),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// A differentiation tape. Confined to one thread; build one per forward pass.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf, if backward has reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }

    /// A leaf that participates in differentiation.
    pub fn parameter(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.value(a).dims2("matmul")?;
        let (k2, n) = self.value(b).dims2("matmul")?;
        if k != k2 {
            return Err(Error::shapes("matmul", self.shape(a), self.shape(b)));
        }
        let mut out = vec![0.0; m * n];
        kernels::gemm(
            MatRef::new(self.value(a).data(), m, k),
            MatRef::new(self.value(b).data(), k, n),
            &mut out,
            0.0,
        );
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Tensor::new([m, n], out)?, Op::MatMul(a, b), rg))
    }

    pub fn binary(&mut self, kind: Binary, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(Error::shapes(binary_name(kind), x.shape(), y.shape()));
        }
        let data = zip_map(x.data(), y.data(), kind);
        let value = Tensor::new(x.shape().to_vec(), data)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::Binary(kind, a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Mul, a, b)
    }

    /// `a ∘ row` with `row` broadcast across every leading index of `a`.
    pub fn row_binary(&mut self, kind: Binary, a: Var, row: Var) -> Result<Var> {
        let (x, r) = (self.value(a), self.value(row));
        let n = x.last_dim();
        if r.len() != n {
            return Err(Error::shapes("row broadcast", x.shape(), r.shape()));
        }
        let mut data = x.data().to_vec();
        for chunk in data.chunks_exact_mut(n) {
            for (v, &w) in chunk.iter_mut().zip(r.data()) {
                *v = apply(kind, *v, w);
            }
        }
        let value = Tensor::new(x.shape().to_vec(), data)?;
        let rg = self.any_grad(&[a, row]);
        Ok(self.push(value, Op::RowBinary(kind, a, row), rg))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        self.row_binary(Binary::Add, a, row)
    }

    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        self.row_binary(Binary::Mul, a, row)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let x = self.value(a);
        let data = x.data().iter().map(|v| v * factor).collect();
        let value = Tensor::new(x.shape().to_vec(), data).expect("same shape");
        let rg = self.any_grad(&[a]);
        self.push(value, Op::Scale(a, factor), rg)
    }

    /// Elementwise product with a constant array (dropout masks, lane masks).
    pub fn mask(&mut self, a: Var, mask: Rc<Vec<f64>>) -> Result<Var> {
        let x = self.value(a);
        if x.len() != mask.len() {
            return Err(Error::shapes("mask", x.shape(), &[mask.len()]));
        }
        let data = x.data().iter().zip(mask.iter()).map(|(v, m)| v * m).collect();
        let value = Tensor::new(x.shape().to_vec(), data)?;
        let rg = self.any_grad(&[a]);
        Ok(self.push(value, Op::Mask(a, mask), rg))
    }

    pub fn unary(&mut self, kind: Unary, a: Var) -> Var {
        let x = self.value(a);
        let data = x
            .data()
            .iter()
            .map(|&v| match kind {
                Unary::Relu => v.max(0.0),
                Unary::Tanh => v.tanh(),
                Unary::Sigmoid => sigmoid(v),
            })
            .collect();
        let value = Tensor::new(x.shape().to_vec(), data).expect("same shape");
        let rg = self.any_grad(&[a]);
        self.push(value, Op::Unary(kind, a), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(Unary::Relu, a)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(Unary::Tanh, a)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(Unary::Sigmoid, a)
    }

    /// Cross-correlation of `[batch, len, in_ch]` with `[width, in_ch, out_ch]`.
    pub fn conv1d(
        &mut self,
        input: Var,
        filters: Var,
        stride: usize,
        padding: Padding,
    ) -> Result<Var> {
        if stride == 0 {
            return Err(Error::invalid("conv1d", "stride must be positive"));
        }
        let (batch, len, in_ch) = self.value(input).dims3("conv1d")?;
        let (width, f_in, out_ch) = self.value(filters).dims3("conv1d")?;
        if f_in != in_ch {
            return Err(Error::shapes(
                "conv1d",
                self.shape(input),
                self.shape(filters),
            ));
        }
        let win = match padding {
            Padding::Same => kernels::same_window(len, width, stride),
            Padding::Valid => kernels::valid_window(len, width, stride).ok_or_else(|| {
                Error::invalid(
                    "conv1d",
                    format!("filter width {width} exceeds input length {len}"),
                )
            })?,
        };
        let geom = ConvGeom {
            batch,
            len,
            in_ch,
            width,
            stride,
            win,
        };
        let cols = kernels::im2col(self.value(input).data(), &geom);
        let mut out = vec![0.0; geom.rows() * out_ch];
        kernels::gemm(
            MatRef::new(&cols, geom.rows(), geom.row_len()),
            MatRef::new(self.value(filters).data(), geom.row_len(), out_ch),
            &mut out,
            0.0,
        );
        let value = Tensor::new([batch, win.out_len, out_ch], out)?;
        let rg = self.any_grad(&[input, filters]);
        Ok(self.push(
            value,
            Op::Conv1d {
                input,
                filters,
                geom,
            },
            rg,
        ))
    }

    /// Windowed max over the length axis of `[batch, len, ch]`, same-style
    /// padding (padded cells never win).
    pub fn maxpool1d(&mut self, input: Var, size: usize, stride: usize) -> Result<Var> {
        if size == 0 || stride == 0 {
            return Err(Error::invalid(
                "maxpool1d",
                format!("size and stride must be positive, got {size} and {stride}"),
            ));
        }
        let (batch, len, ch) = self.value(input).dims3("maxpool1d")?;
        let win: Window = kernels::same_window(len, size, stride);
        let (out, argmax) =
            kernels::maxpool(self.value(input).data(), batch, len, ch, size, stride, win);
        let value = Tensor::new([batch, win.out_len, ch], out)?;
        let rg = self.any_grad(&[input]);
        Ok(self.push(value, Op::MaxPool { input, argmax }, rg))
    }

    /// Training-mode batch normalization over every axis but the last.
    pub fn batch_norm_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        epsilon: f64,
    ) -> Result<(Var, BatchStats)> {
        let xv = self.value(x);
        let c = xv.last_dim();
        let rows = xv.len() / c;
        if rows < 2 {
            return Err(Error::invalid(
                "batch_norm",
                "training mode needs at least two rows per channel",
            ));
        }
        if self.value(gamma).len() != c || self.value(beta).len() != c {
            return Err(Error::shapes("batch_norm", xv.shape(), self.shape(gamma)));
        }
        let mut mean = vec![0.0; c];
        for chunk in xv.data().chunks_exact(c) {
            for (m, v) in mean.iter_mut().zip(chunk) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= rows as f64);
        let mut var = vec![0.0; c];
        for chunk in xv.data().chunks_exact(c) {
            for ((s, v), m) in var.iter_mut().zip(chunk).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        var.iter_mut().for_each(|s| *s /= rows as f64);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + epsilon).sqrt()).collect();

        let mut xhat = xv.data().to_vec();
        for chunk in xhat.chunks_exact_mut(c) {
            for ((v, m), s) in chunk.iter_mut().zip(&mean).zip(&inv_std) {
                *v = (*v - m) * s;
            }
        }
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let mut out = xhat.clone();
        for chunk in out.chunks_exact_mut(c) {
            for ((v, g), b) in chunk.iter_mut().zip(g).zip(b) {
                *v = *v * g + b;
            }
        }
        let value = Tensor::new(xv.shape().to_vec(), out)?;
        let rg = self.any_grad(&[x, gamma, beta]);
        let var_out = self.push(
            value,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            rg,
        );
        Ok((var_out, BatchStats { mean, var }))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("concat", "no parts"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::invalid(
                "concat",
                format!("axis {axis} out of range for rank {}", base.len()),
            ));
        }
        let mut total = 0;
        for p in parts {
            let s = self.shape(*p);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::shapes("concat", &base, s));
            }
            total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for p in parts {
                let t = self.value(*p);
                let chunk = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let value = Tensor::new(shape, data)?;
        let rg = self.any_grad(parts);
        Ok(self.push(
            value,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            rg,
        ))
    }

    pub fn reshape(&mut self, a: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let value = self.value(a).clone().reshape(shape)?;
        let rg = self.any_grad(&[a]);
        Ok(self.push(value, Op::Reshape(a), rg))
    }

    /// Selects rows (axis 0) of a rank-2 tensor; rows may repeat.
    pub fn gather_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var> {
        let (m, n) = self.value(a).dims2("gather_rows")?;
        if rows.is_empty() {
            return Err(Error::invalid("gather_rows", "no rows selected"));
        }
        if let Some(&bad) = rows.iter().find(|&&r| r >= m) {
            return Err(Error::invalid(
                "gather_rows",
                format!("row {bad} out of range for {m} rows"),
            ));
        }
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(rows.len() * n);
        for &r in rows {
            data.extend_from_slice(&src[r * n..(r + 1) * n]);
        }
        let value = Tensor::new([rows.len(), n], data)?;
        let rg = self.any_grad(&[a]);
        Ok(self.push(
            value,
            Op::Gather {
                input: a,
                rows: rows.to_vec(),
            },
            rg,
        ))
    }

    /// Column slice `[start, start + len)` of a rank-2 tensor.
    pub fn narrow_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.value(a).dims2("narrow_cols")?;
        if len == 0 || start + len > n {
            return Err(Error::invalid(
                "narrow_cols",
                format!("columns {start}..{} out of range for {n}", start + len),
            ));
        }
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(m * len);
        for r in 0..m {
            data.extend_from_slice(&src[r * n + start..r * n + start + len]);
        }
        let value = Tensor::new([m, len], data)?;
        let rg = self.any_grad(&[a]);
        Ok(self.push(value, Op::Narrow { input: a, start, len }, rg))
    }

    /// Mean over the batch of `-log softmax(logits)[target]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (b, c) = self.value(logits).dims2("softmax_cross_entropy")?;
        if c < 2 {
            return Err(Error::invalid("softmax_cross_entropy", "need at least two classes"));
        }
        if targets.len() != b {
            return Err(Error::shapes(
                "softmax_cross_entropy",
                self.shape(logits),
                &[targets.len()],
            ));
        }
        if let Some(&t) = targets.iter().find(|&&t| t >= c) {
            return Err(Error::invalid(
                "softmax_cross_entropy",
                format!("target {t} out of range for {c} classes"),
            ));
        }
        let probs = softmax_rows(self.value(logits).data(), c);
        let mut loss = 0.0;
        let x = self.value(logits).data();
        for (i, &t) in targets.iter().enumerate() {
            let row = &x[i * c..(i + 1) * c];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss += lse - row[t];
        }
        loss /= b as f64;
        let rg = self.any_grad(&[logits]);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxXent {
                logits,
                probs,
                targets: targets.to_vec(),
            },
            rg,
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        let rg = self.any_grad(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn sum_squares(&mut self, a: Var) -> Var {
        let s = self.value(a).sum_squares();
        let rg = self.any_grad(&[a]);
        self.push(Tensor::scalar(s), Op::SumSquares(a), rg)
    }

    /// Propagates d(loss)/d(node) to every gradient-requiring leaf, adding to
    /// whatever those leaves already hold.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::invalid(
                "backward",
                format!("loss must be scalar, got shape {:?}", self.shape(loss)),
            ));
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(vec![1.0]);
        for id in (0..=loss.0).rev() {
            let Some(dy) = adj[id].take() else { continue };
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                match &mut self.grads[id] {
                    Some(g) => g.add_assign(&dy),
                    slot @ None => {
                        *slot = Some(Tensor::new(node.value.shape().to_vec(), dy)?);
                    }
                }
                continue;
            }
            self.propagate(id, &dy, &mut adj);
        }
        Ok(())
    }

    fn propagate(&self, id: usize, dy: &[f64], adj: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[id];
        let mut send = |v: Var, f: &dyn Fn(&mut [f64])| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            let slot = adj[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.len()]);
            f(slot);
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = dims2(&self.nodes[a.0].value);
                let n = node.value.last_dim();
                let av = self.nodes[a.0].value.data();
                let bv = self.nodes[b.0].value.data();
                send(*a, &|g| {
                    kernels::gemm(MatRef::new(dy, m, n), MatRef::new(bv, k, n).t(), g, 1.0)
                });
                send(*b, &|g| {
                    kernels::gemm(MatRef::new(av, m, k).t(), MatRef::new(dy, m, n), g, 1.0)
                });
            }
            Op::Binary(kind, a, b) => {
                let av = self.nodes[a.0].value.data();
                let bv = self.nodes[b.0].value.data();
                match kind {
                    Binary::Add => {
                        send(*a, &|g| add_into(g, dy));
                        send(*b, &|g| add_into(g, dy));
                    }
                    Binary::Sub => {
                        send(*a, &|g| add_into(g, dy));
                        send(*b, &|g| g.iter_mut().zip(dy).for_each(|(g, d)| *g -= d));
                    }
                    Binary::Mul => {
                        send(*a, &|g| {
                            for ((g, d), y) in g.iter_mut().zip(dy).zip(bv) {
                                *g += d * y;
                            }
                        });
                        send(*b, &|g| {
                            for ((g, d), x) in g.iter_mut().zip(dy).zip(av) {
                                *g += d * x;
                            }
                        });
                    }
                }
            }
            Op::RowBinary(kind, a, row) => {
                let n = node.value.last_dim();
                let av = self.nodes[a.0].value.data();
                let rv = self.nodes[row.0].value.data();
                match kind {
                    Binary::Add | Binary::Sub => {
                        let sign = if *kind == Binary::Add { 1.0 } else { -1.0 };
                        send(*a, &|g| add_into(g, dy));
                        send(*row, &|g| {
                            for chunk in dy.chunks_exact(n) {
                                for (g, d) in g.iter_mut().zip(chunk) {
                                    *g += sign * d;
                                }
                            }
                        });
                    }
                    Binary::Mul => {
                        send(*a, &|g| {
                            for (gc, dc) in g.chunks_exact_mut(n).zip(dy.chunks_exact(n)) {
                                for ((g, d), r) in gc.iter_mut().zip(dc).zip(rv) {
                                    *g += d * r;
                                }
                            }
                        });
                        send(*row, &|g| {
                            for (dc, xc) in dy.chunks_exact(n).zip(av.chunks_exact(n)) {
                                for ((g, d), x) in g.iter_mut().zip(dc).zip(xc) {
                                    *g += d * x;
                                }
                            }
                        });
                    }
                }
            }
            Op::Scale(a, f) => send(*a, &|g| {
                g.iter_mut().zip(dy).for_each(|(g, d)| *g += d * f)
            }),
            Op::Mask(a, m) => send(*a, &|g| {
                for ((g, d), m) in g.iter_mut().zip(dy).zip(m.iter()) {
                    *g += d * m;
                }
            }),
            Op::Unary(kind, a) => {
                let y = node.value.data();
                let x = self.nodes[a.0].value.data();
                send(*a, &|g| match kind {
                    Unary::Relu => {
                        for ((g, d), x) in g.iter_mut().zip(dy).zip(x) {
                            if *x > 0.0 {
                                *g += d;
                            }
                        }
                    }
                    Unary::Tanh => {
                        for ((g, d), y) in g.iter_mut().zip(dy).zip(y) {
                            *g += d * (1.0 - y * y);
                        }
                    }
                    Unary::Sigmoid => {
                        for ((g, d), y) in g.iter_mut().zip(dy).zip(y) {
                            *g += d * y * (1.0 - y);
                        }
                    }
                });
            }
            Op::Conv1d {
                input,
                filters,
                geom,
            } => {
                let out_ch = node.value.last_dim();
                let fv = self.nodes[filters.0].value.data();
                let x = self.nodes[input.0].value.data();
                let (rows, k) = (geom.rows(), geom.row_len());
                send(*filters, &|g| {
                    let cols = kernels::im2col(x, geom);
                    kernels::gemm(
                        MatRef::new(&cols, rows, k).t(),
                        MatRef::new(dy, rows, out_ch),
                        g,
                        1.0,
                    );
                });
                send(*input, &|g| {
                    let mut dcols = vec![0.0; rows * k];
                    kernels::gemm(
                        MatRef::new(dy, rows, out_ch),
                        MatRef::new(fv, k, out_ch).t(),
                        &mut dcols,
                        0.0,
                    );
                    kernels::col2im(&dcols, geom, g);
                });
            }
            Op::MaxPool { input, argmax } => send(*input, &|g| {
                for (d, &i) in dy.iter().zip(argmax) {
                    g[i] += d;
                }
            }),
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let c = node.value.last_dim();
                let rows = (xhat.len() / c) as f64;
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                for (dc, hc) in dy.chunks_exact(c).zip(xhat.chunks_exact(c)) {
                    for j in 0..c {
                        dgamma[j] += dc[j] * hc[j];
                        dbeta[j] += dc[j];
                    }
                }
                let gv = self.nodes[gamma.0].value.data();
                send(*x, &|g| {
                    for ((gc, dc), hc) in g
                        .chunks_exact_mut(c)
                        .zip(dy.chunks_exact(c))
                        .zip(xhat.chunks_exact(c))
                    {
                        for j in 0..c {
                            gc[j] += gv[j] * inv_std[j] / rows
                                * (rows * dc[j] - dbeta[j] - hc[j] * dgamma[j]);
                        }
                    }
                });
                send(*gamma, &|g| add_into(g, &dgamma));
                send(*beta, &|g| add_into(g, &dbeta));
            }
            Op::Concat { parts, axis } => {
                let shape = node.value.shape();
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[axis + 1..].iter().product();
                let total = shape[*axis] * inner;
                let mut offset = 0;
                for p in parts {
                    let chunk = self.nodes[p.0].value.shape()[*axis] * inner;
                    send(*p, &|g| {
                        for o in 0..outer {
                            add_into(
                                &mut g[o * chunk..(o + 1) * chunk],
                                &dy[o * total + offset..o * total + offset + chunk],
                            );
                        }
                    });
                    offset += chunk;
                }
            }
            Op::Reshape(a) => send(*a, &|g| add_into(g, dy)),
            Op::Gather { input, rows } => {
                let n = node.value.last_dim();
                send(*input, &|g| {
                    for (i, &r) in rows.iter().enumerate() {
                        add_into(&mut g[r * n..(r + 1) * n], &dy[i * n..(i + 1) * n]);
                    }
                });
            }
            Op::Narrow { input, start, len } => {
                let n = self.nodes[input.0].value.last_dim();
                send(*input, &|g| {
                    for (r, d) in dy.chunks_exact(*len).enumerate() {
                        add_into(&mut g[r * n + start..r * n + start + len], d);
                    }
                });
            }
            Op::SoftmaxXent {
                logits,
                probs,
                targets,
            } => {
                let c = self.nodes[logits.0].value.last_dim();
                let scale = dy[0] / targets.len() as f64;
                send(*logits, &|g| {
                    for (i, &t) in targets.iter().enumerate() {
                        for j in 0..c {
                            let onehot = if j == t { 1.0 } else { 0.0 };
                            g[i * c + j] += scale * (probs[i * c + j] - onehot);
                        }
                    }
                });
            }
            Op::Sum(a) => send(*a, &|g| g.iter_mut().for_each(|g| *g += dy[0])),
            Op::SumSquares(a) => {
                let x = self.nodes[a.0].value.data();
                send(*a, &|g| {
                    for (g, x) in g.iter_mut().zip(x) {
                        *g += 2.0 * x * dy[0];
                    }
                });
            }
        }
    }
}

fn dims2(t: &Tensor) -> (usize, usize) {
    (t.shape()[0], t.shape()[1])
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn apply(kind: Binary, a: f64, b: f64) -> f64 {
    match kind {
        Binary::Add => a + b,
        Binary::Sub => a - b,
        Binary::Mul => a * b,
    }
}

fn zip_map(a: &[f64], b: &[f64], kind: Binary) -> Vec<f64> {
    a.iter().zip(b).map(|(&x, &y)| apply(kind, x, y)).collect()
}

fn binary_name(kind: Binary) -> &'static str {
    match kind {
        Binary::Add => "add",
        Binary::Sub => "sub",
        Binary::Mul => "mul",
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Row-wise softmax of a flat `[rows, c]` buffer, max-shifted.
pub fn softmax_rows(x: &[f64], c: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len());
    for row in x.chunks_exact(c) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let start = out.len();
        out.extend(row.iter().map(|v| (v - max).exp()));
        let z: f64 = out[start..].iter().sum();
        out[start..].iter_mut().for_each(|v| *v /= z);
    }
    out
}
