//! Define-by-run reverse-mode automatic differentiation.
//!
//! Every forward pass records onto a fresh [`Tape`]. Nodes are appended in
//! evaluation order, so the tape is topologically sorted by construction and
//! [`Tape::backward`] is a single reverse sweep.
//!
//! Shapes never broadcast. Where a row vector has to be applied to every row
//! of a batch, the caller says so with [`Tape::repeat_rows`].

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Binary(BinaryOp, Var, Var),
    Transpose(Var),
    Scale(Var, f64),
    SquaredNorm(Var),
    RowSum(Var),
    Sum(Var),
    RepeatRows(Var),
    StackCols(Vec<Var>),
    SliceCols(Var, usize),
    LogSoftmax(Var, f64),
    Gather(Var, Vec<usize>),
    Relu(Var),
    Tanh(Var),
    Reshape(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Recorded computation. Rebuilt for every forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Result of a backward sweep: one optional gradient per tape node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `var`. `None` only for nodes
    /// that do not require gradients.
    pub fn get(&self, var: Var) -> Option<&[f64]> {
        self.grads[var.0].as_deref()
    }

    pub fn tensor(&self, var: Var) -> Option<Tensor> {
        self.get(var)
            .map(|g| Tensor::new(self.shapes[var.0].clone(), g.to_vec()).expect("grad shape"))
    }
}

impl Tape {
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

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    /// Records a leaf copied from `tensor`; it participates in backward iff
    /// the tensor is marked as a parameter.
    pub fn leaf(&mut self, tensor: &Tensor) -> Var {
        let requires_grad = tensor.requires_grad();
        let mut value = tensor.clone();
        value.clear_grad();
        self.push_unchecked(value, Op::Leaf, requires_grad)
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&mut self, mut tensor: Tensor) -> Var {
        tensor.set_requires_grad(false);
        self.push_unchecked(tensor, Op::Leaf, false)
    }

    fn push_unchecked(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, name: &str, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(name.to_string()));
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push_unchecked(value, op, requires_grad))
    }

    fn matrix_dims(&self, op: &'static str, v: Var) -> Result<(usize, usize)> {
        let shape = self.value(v).shape();
        if shape.len() != 2 {
            return Err(Error::shape(op, shape, &[0, 0]));
        }
        Ok((shape[0], shape[1]))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.matrix_dims("matmul", a)?;
        let (k2, p) = self.matrix_dims("matmul", b)?;
        if k != k2 {
            return Err(Error::shape("matmul", self.value(a).shape(), self.value(b).shape()));
        }
        let out = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, p);
        let value = Tensor::new(vec![m, p], out)?;
        self.push("matmul", value, Op::MatMul(a, b), &[a, b])
    }

    pub fn elementwise(&mut self, a: Var, b: Var, op: BinaryOp) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::shape("elementwise", va.shape(), vb.shape()));
        }
        let f: fn(f64, f64) -> f64 = match op {
            BinaryOp::Add => |x, y| x + y,
            BinaryOp::Sub => |x, y| x - y,
            BinaryOp::Mul => |x, y| x * y,
        };
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(va.shape().to_vec(), data)?;
        self.push("elementwise", value, Op::Binary(op, a, b), &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, BinaryOp::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, BinaryOp::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, BinaryOp::Mul)
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.matrix_dims("transpose", a)?;
        let src = self.value(a).data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = src[i * n + j];
            }
        }
        let value = Tensor::new(vec![n, m], out)?;
        self.push("transpose", value, Op::Transpose(a), &[a])
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let va = self.value(a);
        let data = va.data().iter().map(|x| x * factor).collect();
        let value = Tensor::new(va.shape().to_vec(), data)?;
        self.push("scale", value, Op::Scale(a, factor), &[a])
    }

    /// `Σᵢ vᵢ²` of a vector.
    pub fn squared_l2_norm(&mut self, v: Var) -> Result<Var> {
        let vv = self.value(v);
        if vv.shape().len() != 1 {
            return Err(Error::shape("squared_l2_norm", vv.shape(), &[vv.len()]));
        }
        let s = vv.data().iter().map(|x| x * x).sum();
        self.push("squared_l2_norm", Tensor::scalar(s), Op::SquaredNorm(v), &[v])
    }

    /// Sums each row of a `[B×C]` matrix into a length-`B` vector.
    pub fn row_sum(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.matrix_dims("row_sum", a)?;
        let src = self.value(a).data();
        let out = (0..m).map(|i| src[i * n..(i + 1) * n].iter().sum()).collect();
        let value = Tensor::new(vec![m], out)?;
        self.push("row_sum", value, Op::RowSum(a), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        self.push("sum", Tensor::scalar(s), Op::Sum(a), &[a])
    }

    /// Tiles a length-`n` vector into a `[rows×n]` matrix.
    pub fn repeat_rows(&mut self, v: Var, rows: usize) -> Result<Var> {
        let vv = self.value(v);
        if vv.shape().len() != 1 || rows == 0 {
            return Err(Error::shape("repeat_rows", vv.shape(), &[rows, vv.len()]));
        }
        let n = vv.len();
        let data = vv.data().repeat(rows);
        let value = Tensor::new(vec![rows, n], data)?;
        self.push("repeat_rows", value, Op::RepeatRows(v), &[v])
    }

    /// Stacks equally long vectors as the columns of a matrix.
    pub fn stack_cols(&mut self, cols: &[Var]) -> Result<Var> {
        let first = cols
            .first()
            .ok_or_else(|| Error::Config("stack_cols of zero columns".into()))?;
        let b = self.value(*first).len();
        for c in cols {
            let s = self.value(*c).shape();
            if s != [b] {
                return Err(Error::shape("stack_cols", &[b], s));
            }
        }
        let k = cols.len();
        let mut data = vec![0.0; b * k];
        for (j, c) in cols.iter().enumerate() {
            for (i, x) in self.value(*c).data().iter().enumerate() {
                data[i * k + j] = *x;
            }
        }
        let value = Tensor::new(vec![b, k], data)?;
        self.push("stack_cols", value, Op::StackCols(cols.to_vec()), cols)
    }

    /// Keeps columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (m, n) = self.matrix_dims("slice_cols", a)?;
        if start >= end || end > n {
            return Err(Error::shape("slice_cols", &[m, n], &[start, end]));
        }
        let src = self.value(a).data();
        let w = end - start;
        let mut data = Vec::with_capacity(m * w);
        for i in 0..m {
            data.extend_from_slice(&src[i * n + start..i * n + end]);
        }
        let value = Tensor::new(vec![m, w], data)?;
        self.push("slice_cols", value, Op::SliceCols(a, start), &[a])
    }

    /// Row-wise `log softmax(x / τ)` over the last axis of a vector or matrix,
    /// shifted by the row maximum before exponentiation.
    pub fn log_softmax(&mut self, a: Var, temperature: f64) -> Result<Var> {
        if !(temperature.is_finite() && temperature > 0.0) {
            return Err(Error::Config(format!("temperature must be > 0, got {temperature}")));
        }
        let va = self.value(a);
        if va.shape().is_empty() || va.shape().len() > 2 {
            return Err(Error::shape("log_softmax", va.shape(), &[0, 0]));
        }
        let c = va.cols();
        let mut data = va.data().to_vec();
        for row in data.chunks_mut(c) {
            log_softmax_in_place(row, temperature);
        }
        let value = Tensor::new(va.shape().to_vec(), data)?;
        self.push("log_softmax", value, Op::LogSoftmax(a, temperature), &[a])
    }

    /// Picks `a[i, index[i]]` from each row.
    pub fn gather(&mut self, a: Var, index: &[usize]) -> Result<Var> {
        let (m, n) = self.matrix_dims("gather", a)?;
        if index.len() != m {
            return Err(Error::shape("gather", &[m, n], &[index.len()]));
        }
        if let Some(&bad) = index.iter().find(|&&j| j >= n) {
            return Err(Error::LabelOutOfRange { label: bad, classes: n });
        }
        let src = self.value(a).data();
        let data = index.iter().enumerate().map(|(i, &j)| src[i * n + j]).collect();
        let value = Tensor::new(vec![m], data)?;
        self.push("gather", value, Op::Gather(a, index.to_vec()), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let va = self.value(a);
        let data = va.data().iter().map(|x| x.max(0.0)).collect();
        let value = Tensor::new(va.shape().to_vec(), data)?;
        self.push("relu", value, Op::Relu(a), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let va = self.value(a);
        let data = va.data().iter().map(|x| x.tanh()).collect();
        let value = Tensor::new(va.shape().to_vec(), data)?;
        self.push("tanh", value, Op::Tanh(a), &[a])
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).clone().reshape(shape.to_vec())?;
        self.push("reshape", value, Op::Reshape(a), &[a])
    }

    /// Reverse sweep from a scalar `loss`. Every node that requires a
    /// gradient gets one, zero-filled when it is not on the path to `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::NotScalar(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![1.0]);
        }

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }

        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        for (idx, node) in self.nodes.iter().enumerate() {
            if node.requires_grad && grads[idx].is_none() {
                grads[idx] = Some(vec![0.0; node.value.len()]);
            } else if !node.requires_grad {
                grads[idx] = None;
            }
        }
        Ok(Gradients { grads, shapes })
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (self.value(*a).rows(), self.value(*a).cols());
                let p = self.value(*b).cols();
                if self.requires_grad(*a) {
                    // dA = G Bᵀ
                    let bv = self.value(*b).data();
                    let mut da = vec![0.0; m * k];
                    for i in 0..m {
                        for j in 0..p {
                            let gij = g[i * p + j];
                            if gij == 0.0 {
                                continue;
                            }
                            for t in 0..k {
                                da[i * k + t] += gij * bv[t * p + j];
                            }
                        }
                    }
                    accumulate(grads, *a, &da);
                }
                if self.requires_grad(*b) {
                    // dB = Aᵀ G
                    let av = self.value(*a).data();
                    let mut db = vec![0.0; k * p];
                    for i in 0..m {
                        for t in 0..k {
                            let ait = av[i * k + t];
                            if ait == 0.0 {
                                continue;
                            }
                            for j in 0..p {
                                db[t * p + j] += ait * g[i * p + j];
                            }
                        }
                    }
                    accumulate(grads, *b, &db);
                }
            }
            Op::Binary(op, a, b) => {
                let (ga, gb): (Vec<f64>, Vec<f64>) = match op {
                    BinaryOp::Add => (g.to_vec(), g.to_vec()),
                    BinaryOp::Sub => (g.to_vec(), g.iter().map(|x| -x).collect()),
                    BinaryOp::Mul => {
                        let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                        (
                            g.iter().zip(vb).map(|(x, y)| x * y).collect(),
                            g.iter().zip(va).map(|(x, y)| x * y).collect(),
                        )
                    }
                };
                if self.requires_grad(*a) {
                    accumulate(grads, *a, &ga);
                }
                if self.requires_grad(*b) {
                    accumulate(grads, *b, &gb);
                }
            }
            Op::Transpose(a) => {
                if self.requires_grad(*a) {
                    let (n, m) = (out.rows(), out.cols());
                    let mut da = vec![0.0; m * n];
                    for i in 0..n {
                        for j in 0..m {
                            da[j * n + i] = g[i * m + j];
                        }
                    }
                    accumulate(grads, *a, &da);
                }
            }
            Op::Scale(a, factor) => {
                if self.requires_grad(*a) {
                    let da: Vec<f64> = g.iter().map(|x| x * factor).collect();
                    accumulate(grads, *a, &da);
                }
            }
            Op::SquaredNorm(v) => {
                if self.requires_grad(*v) {
                    let dv: Vec<f64> = self.value(*v).data().iter().map(|x| 2.0 * x * g[0]).collect();
                    accumulate(grads, *v, &dv);
                }
            }
            Op::RowSum(a) => {
                if self.requires_grad(*a) {
                    let n = self.value(*a).cols();
                    let da: Vec<f64> = g.iter().flat_map(|&x| std::iter::repeat_n(x, n)).collect();
                    accumulate(grads, *a, &da);
                }
            }
            Op::Sum(a) => {
                if self.requires_grad(*a) {
                    let da = vec![g[0]; self.value(*a).len()];
                    accumulate(grads, *a, &da);
                }
            }
            Op::RepeatRows(v) => {
                if self.requires_grad(*v) {
                    let n = self.value(*v).len();
                    let mut dv = vec![0.0; n];
                    for row in g.chunks(n) {
                        dv.iter_mut().zip(row).for_each(|(d, x)| *d += x);
                    }
                    accumulate(grads, *v, &dv);
                }
            }
            Op::StackCols(cols) => {
                let k = cols.len();
                for (j, c) in cols.iter().enumerate() {
                    if self.requires_grad(*c) {
                        let dc: Vec<f64> = g.chunks(k).map(|row| row[j]).collect();
                        accumulate(grads, *c, &dc);
                    }
                }
            }
            Op::SliceCols(a, start) => {
                if self.requires_grad(*a) {
                    let n = self.value(*a).cols();
                    let w = out.cols();
                    let mut da = vec![0.0; self.value(*a).len()];
                    for (i, row) in g.chunks(w).enumerate() {
                        da[i * n + start..i * n + start + w].copy_from_slice(row);
                    }
                    accumulate(grads, *a, &da);
                }
            }
            Op::LogSoftmax(a, tau) => {
                if self.requires_grad(*a) {
                    // y = log softmax(x/τ): dx_j = (g_j − p_j Σ_k g_k) / τ
                    let c = out.cols();
                    let mut da = Vec::with_capacity(out.len());
                    for (grow, yrow) in g.chunks(c).zip(out.data().chunks(c)) {
                        let gs: f64 = grow.iter().sum();
                        da.extend(grow.iter().zip(yrow).map(|(gj, yj)| (gj - yj.exp() * gs) / tau));
                    }
                    accumulate(grads, *a, &da);
                }
            }
            Op::Gather(a, index) => {
                if self.requires_grad(*a) {
                    let n = self.value(*a).cols();
                    let mut da = vec![0.0; self.value(*a).len()];
                    for (i, &j) in index.iter().enumerate() {
                        da[i * n + j] += g[i];
                    }
                    accumulate(grads, *a, &da);
                }
            }
            Op::Relu(a) => {
                if self.requires_grad(*a) {
                    let da: Vec<f64> = g
                        .iter()
                        .zip(self.value(*a).data())
                        .map(|(gi, x)| if *x > 0.0 { *gi } else { 0.0 })
                        .collect();
                    accumulate(grads, *a, &da);
                }
            }
            Op::Tanh(a) => {
                if self.requires_grad(*a) {
                    let da: Vec<f64> = g.iter().zip(out.data()).map(|(gi, y)| gi * (1.0 - y * y)).collect();
                    accumulate(grads, *a, &da);
                }
            }
            Op::Reshape(a) => {
                if self.requires_grad(*a) {
                    accumulate(grads, *a, g);
                }
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], var: Var, delta: &[f64]) {
    match &mut grads[var.0] {
        Some(g) => g.iter_mut().zip(delta).for_each(|(a, b)| *a += b),
        slot @ None => *slot = Some(delta.to_vec()),
    }
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, p: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * p];
    for i in 0..m {
        let orow = &mut out[i * p..(i + 1) * p];
        for t in 0..k {
            let ait = a[i * k + t];
            if ait == 0.0 {
                continue;
            }
            for (o, bv) in orow.iter_mut().zip(&b[t * p..(t + 1) * p]) {
                *o += ait * bv;
            }
        }
    }
    out
}

/// In-place `log softmax(row / τ)` with max subtraction.
pub fn log_softmax_in_place(row: &mut [f64], temperature: f64) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    for x in row.iter_mut() {
        *x = (*x - max) / temperature;
    }
    let lse = row.iter().map(|x| x.exp()).sum::<f64>().ln();
    for x in row.iter_mut() {
        *x -= lse;
    }
}

/// Non-taped `log softmax(logits / τ)` for a single row.
pub fn stable_log_softmax(logits: &[f64], temperature: f64) -> Result<Vec<f64>> {
    if !(temperature.is_finite() && temperature > 0.0) {
        return Err(Error::Config(format!("temperature must be > 0, got {temperature}")));
    }
    if logits.is_empty() {
        return Err(Error::Config("log_softmax of an empty vector".into()));
    }
    let mut out = logits.to_vec();
    log_softmax_in_place(&mut out, temperature);
    Ok(out)
}

/// Central-difference gradient of a scalar function at `params`.
pub fn finite_difference_grad<F>(mut f: F, params: &Tensor, eps: f64) -> Result<Tensor>
where
    F: FnMut(&Tensor) -> Result<f64>,
{
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::Config(format!("finite-difference eps {eps} outside [1e-7, 1e-3]")));
    }
    let mut probe = params.clone();
    let mut grad = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        let orig = params.data()[i];
        probe.data_mut()[i] = orig + eps;
        let plus = f(&probe)?;
        probe.data_mut()[i] = orig - eps;
        let minus = f(&probe)?;
        probe.data_mut()[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite(format!("finite difference at coordinate {i}")));
        }
        grad.push((plus - minus) / (2.0 * eps));
    }
    Tensor::new(params.shape().to_vec(), grad)
}

/// Largest elementwise relative error `|a−b| / max(|a|, |b|, floor)`.
pub fn max_relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}
