//! Tape-based reverse-mode differentiation.
//!
//! Nodes are appended in evaluation order, so the node vector is already a
//! topological order and backward is a single reverse sweep.

use crate::error::{Error, Result};
use crate::tensor_core::tensor::Tensor;

const LAYER_NORM_EPS: f64 = 1e-5;
/// Added to the L2 norm before dividing.
pub const NORM_EPS: f64 = 1e-12;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddRow(Var, Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        normed: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Gelu(Var),
    Tanh(Var),
    Gather {
        table: Var,
        indices: Vec<usize>,
    },
    ConcatRows(Vec<Var>),
    SliceRows {
        x: Var,
        start: usize,
    },
    L2NormalizeRows {
        x: Var,
        norms: Vec<f64>,
    },
    SoftmaxRows(Var),
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
    Sum(Var),
    Mean(Var),
    Element {
        x: Var,
        index: usize,
    },
    MulScalar(Var, Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records a forward computation and differentiates it.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of a node, or `None` if it does not require grad.
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    /// Gradient of a node; zeros when the node is off the loss path or frozen.
    pub fn get_or_zeros(&self, var: Var) -> Tensor {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[var.0]))
    }

    pub fn take(&mut self, var: Var) -> Tensor {
        self.grads[var.0]
            .take()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[var.0]))
    }
}

fn dim_err(op: &str, a: &[usize], b: &[usize]) -> Error {
    Error::Dimension(format!("{op}: incompatible shapes {a:?} and {b:?}"))
}

fn matmul_kernel(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, bv) in crow.iter_mut().zip(brow) {
                *cv += aip * bv;
            }
        }
    }
    c
}

fn transpose_kernel(a: &[f64], m: usize, n: usize) -> Vec<f64> {
    let mut t = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            t[j * m + i] = a[i * n + j];
        }
    }
    t
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

fn softmax_row(row: &[f64], out: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &v) in out.iter_mut().zip(row) {
        *o = (v - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
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

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    /// Frozen leaf.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    fn push(&mut self, name: &'static str, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: name });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn matrix_dims(&self, op: &str, var: Var) -> Result<(usize, usize)> {
        let shape = self.shape(var);
        match shape {
            [m, n] => Ok((*m, *n)),
            _ => Err(Error::Dimension(format!(
                "{op}: expected a matrix, got shape {shape:?}"
            ))),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.matrix_dims("matmul", a)?;
        let (k2, n) = self.matrix_dims("matmul", b)?;
        if k != k2 {
            return Err(dim_err("matmul", self.shape(a), self.shape(b)));
        }
        let c = matmul_kernel(self.value(a).data(), self.value(b).data(), m, k, n);
        self.push("matmul", Tensor::new(&[m, n], c)?, Op::MatMul(a, b), &[a, b])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.matrix_dims("transpose", a)?;
        let t = transpose_kernel(self.value(a).data(), m, n);
        self.push("transpose", Tensor::new(&[n, m], t)?, Op::Transpose(a), &[a])
    }

    fn same_shape(&self, op: &str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(dim_err(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn zip_values(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(self.shape(a), data).expect("same shape")
    }

    fn map_values(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let data = self.value(a).data().iter().map(|&x| f(x)).collect();
        Tensor::new(self.shape(a), data).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let v = self.zip_values(a, b, |x, y| x + y);
        self.push("add", v, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let v = self.zip_values(a, b, |x, y| x - y);
        self.push("sub", v, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let v = self.zip_values(a, b, |x, y| x * y);
        self.push("mul", v, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let v = self.map_values(a, |x| x * factor);
        self.push("scale", v, Op::Scale(a, factor), &[a])
    }

    /// `x[m×n] + row[n]`, the row broadcast over every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (_, n) = self.matrix_dims("add_row", x)?;
        if self.value(row).numel() != n {
            return Err(dim_err("add_row", self.shape(x), self.shape(row)));
        }
        let r = self.value(row).data().to_vec();
        let mut v = self.value(x).clone();
        for chunk in v.data_mut().chunks_mut(n.max(1)) {
            for (o, b) in chunk.iter_mut().zip(&r) {
                *o += b;
            }
        }
        self.push("add_row", v, Op::AddRow(x, row), &[x, row])
    }

    /// Normalizes each row to zero mean and unit variance, then applies
    /// the elementwise `gain` and `bias` (both of row width).
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let (m, n) = self.matrix_dims("layer_norm", x)?;
        if self.value(gain).numel() != n || self.value(bias).numel() != n {
            return Err(dim_err("layer_norm", self.shape(x), self.shape(gain)));
        }
        let xv = self.value(x).data();
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let mut normed = vec![0.0; m * n];
        let mut inv_std = vec![0.0; m];
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &xv[i * n..(i + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std[i] = inv;
            for j in 0..n {
                let h = (row[j] - mean) * inv;
                normed[i * n + j] = h;
                out[i * n + j] = h * g[j] + b[j];
            }
        }
        let op = Op::LayerNorm {
            x,
            gain,
            bias,
            normed,
            inv_std,
        };
        self.push("layer_norm", Tensor::new(&[m, n], out)?, op, &[x, gain, bias])
    }

    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let v = self.map_values(x, gelu);
        self.push("gelu", v, Op::Gelu(x), &[x])
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        let v = self.map_values(x, f64::tanh);
        self.push("tanh", v, Op::Tanh(x), &[x])
    }

    /// Rows of `table` at `indices`, in order.
    pub fn gather_rows(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let (rows, cols) = self.matrix_dims("gather_rows", table)?;
        let mut out = Vec::with_capacity(indices.len() * cols);
        for &i in indices {
            if i >= rows {
                return Err(Error::Index(format!(
                    "gather_rows: row {i} out of range for {rows} rows"
                )));
            }
            out.extend_from_slice(self.value(table).row(i));
        }
        let op = Op::Gather {
            table,
            indices: indices.to_vec(),
        };
        self.push("gather_rows", Tensor::new(&[indices.len(), cols], out)?, op, &[table])
    }

    /// Stacks matrices with the same row width along the row axis.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Dimension("concat_rows: no inputs".into()))?;
        let (_, cols) = self.matrix_dims("concat_rows", first)?;
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let (r, c) = self.matrix_dims("concat_rows", p)?;
            if c != cols {
                return Err(dim_err("concat_rows", self.shape(first), self.shape(p)));
            }
            rows += r;
            out.extend_from_slice(self.value(p).data());
        }
        self.push(
            "concat_rows",
            Tensor::new(&[rows, cols], out)?,
            Op::ConcatRows(parts.to_vec()),
            parts,
        )
    }

    /// Rows `start..end` of a matrix.
    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (rows, cols) = self.matrix_dims("slice_rows", x)?;
        if start > end || end > rows {
            return Err(Error::Index(format!(
                "slice_rows: {start}..{end} out of range for {rows} rows"
            )));
        }
        let data = self.value(x).data()[start * cols..end * cols].to_vec();
        self.push(
            "slice_rows",
            Tensor::new(&[end - start, cols], data)?,
            Op::SliceRows { x, start },
            &[x],
        )
    }

    /// Divides each row by its L2 norm plus [`NORM_EPS`].
    pub fn l2_normalize_rows(&mut self, x: Var) -> Result<Var> {
        let (m, n) = self.matrix_dims("l2_normalize_rows", x)?;
        let xv = self.value(x).data();
        let mut norms = vec![0.0; m];
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &xv[i * n..(i + 1) * n];
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            norms[i] = norm;
            for j in 0..n {
                out[i * n + j] = row[j] / (norm + NORM_EPS);
            }
        }
        self.push(
            "l2_normalize_rows",
            Tensor::new(&[m, n], out)?,
            Op::L2NormalizeRows { x, norms },
            &[x],
        )
    }

    /// Pairwise cosine similarity between the rows of `a` and of `b`: `[m×n]`.
    pub fn cosine_similarity(&mut self, a: Var, b: Var) -> Result<Var> {
        let na = self.l2_normalize_rows(a)?;
        let nb = self.l2_normalize_rows(b)?;
        let nbt = self.transpose(nb)?;
        self.matmul(na, nbt)
    }

    /// Softmax along `axis`, which must be the last axis of the tensor or
    /// axis 0 of a matrix.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let rank = self.shape(x).len();
        if axis + 1 == rank {
            return self.softmax_rows(x);
        }
        if rank == 2 && axis == 0 {
            let t = self.transpose(x)?;
            let s = self.softmax_rows(t)?;
            return self.transpose(s);
        }
        Err(Error::Dimension(format!(
            "softmax: unsupported axis {axis} for shape {:?}",
            self.shape(x)
        )))
    }

    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let (m, n) = self.value(x).rows_cols();
        if n == 0 {
            return Err(Error::Dimension("softmax over an empty axis".into()));
        }
        let xv = self.value(x).data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            softmax_row(&xv[i * n..(i + 1) * n], &mut out[i * n..(i + 1) * n]);
        }
        let shape = self.shape(x).to_vec();
        self.push("softmax", Tensor::new(&shape, out)?, Op::SoftmaxRows(x), &[x])
    }

    /// Batch-mean negative log-likelihood of `labels` under row-wise softmax.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (b, n) = self.matrix_dims("cross_entropy", logits)?;
        if labels.len() != b {
            return Err(Error::Dimension(format!(
                "cross_entropy: {b} logit rows but {} labels",
                labels.len()
            )));
        }
        if b == 0 || n == 0 {
            return Err(Error::Dimension("cross_entropy: empty batch or class axis".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= n) {
            return Err(Error::Index(format!(
                "cross_entropy: label {bad} out of range for {n} classes"
            )));
        }
        let lv = self.value(logits).data();
        let mut probs = vec![0.0; b * n];
        let mut loss = 0.0;
        for (i, &label) in labels.iter().enumerate() {
            let row = &lv[i * n..(i + 1) * n];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss += lse - row[label];
            softmax_row(row, &mut probs[i * n..(i + 1) * n]);
        }
        let op = Op::CrossEntropy {
            logits,
            labels: labels.to_vec(),
            probs,
        };
        self.push("cross_entropy", Tensor::scalar(loss / b as f64), op, &[logits])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().sum();
        self.push("sum", Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).numel();
        if n == 0 {
            return Err(Error::Dimension("mean of an empty tensor".into()));
        }
        let s = self.value(x).data().iter().sum::<f64>() / n as f64;
        self.push("mean", Tensor::scalar(s), Op::Mean(x), &[x])
    }

    /// The flat element at `index`, as a scalar.
    pub fn element(&mut self, x: Var, index: usize) -> Result<Var> {
        let n = self.value(x).numel();
        if index >= n {
            return Err(Error::Index(format!("element: {index} out of range for {n} values")));
        }
        let v = self.value(x).data()[index];
        self.push("element", Tensor::scalar(v), Op::Element { x, index }, &[x])
    }

    /// `x * s` for a scalar `s`.
    pub fn mul_scalar(&mut self, x: Var, s: Var) -> Result<Var> {
        if self.value(s).numel() != 1 {
            return Err(Error::Dimension(format!(
                "mul_scalar: expected a scalar, got shape {:?}",
                self.shape(s)
            )));
        }
        let sv = self.value(s).item();
        let v = self.map_values(x, |a| a * sv);
        self.push("mul_scalar", v, Op::MulScalar(x, s), &[x, s])
    }

    /// Reverse sweep from a scalar loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let shapes: Vec<Vec<usize>> = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(dy) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &dy, &mut grads);
            grads[idx] = Some(dy);
        }

        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .enumerate()
            .map(|(i, (g, node))| {
                if !node.requires_grad {
                    return None;
                }
                let data = g.unwrap_or_else(|| vec![0.0; node.value.numel()]);
                Some(Tensor::new(&shapes[i], data).expect("gradient shape matches value"))
            })
            .collect();
        Ok(Gradients { grads, shapes })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], var: Var, f: impl FnOnce(&mut [f64])) {
        if !self.nodes[var.0].requires_grad {
            return;
        }
        let slot = grads[var.0].get_or_insert_with(|| vec![0.0; self.nodes[var.0].value.numel()]);
        f(slot);
    }

    fn propagate(&self, node: &Node, dy: &[f64], grads: &mut [Option<Vec<f64>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[1];
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                if self.requires_grad(*a) {
                    let bt = transpose_kernel(bv, k, n);
                    let da = matmul_kernel(dy, &bt, m, n, k);
                    self.accumulate(grads, *a, |g| g.iter_mut().zip(&da).for_each(|(g, d)| *g += d));
                }
                if self.requires_grad(*b) {
                    let at = transpose_kernel(av, m, k);
                    let db = matmul_kernel(&at, dy, k, m, n);
                    self.accumulate(grads, *b, |g| g.iter_mut().zip(&db).for_each(|(g, d)| *g += d));
                }
            }
            Op::Transpose(a) => {
                let (m, n) = (self.shape(*a)[0], self.shape(*a)[1]);
                let da = transpose_kernel(dy, n, m);
                self.accumulate(grads, *a, |g| g.iter_mut().zip(&da).for_each(|(g, d)| *g += d));
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, |g| g.iter_mut().zip(dy).for_each(|(g, d)| *g += d));
                self.accumulate(grads, *b, |g| g.iter_mut().zip(dy).for_each(|(g, d)| *g += d));
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, |g| g.iter_mut().zip(dy).for_each(|(g, d)| *g += d));
                self.accumulate(grads, *b, |g| g.iter_mut().zip(dy).for_each(|(g, d)| *g -= d));
            }
            Op::Mul(a, b) => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                self.accumulate(grads, *a, |g| {
                    for ((g, d), y) in g.iter_mut().zip(dy).zip(bv) {
                        *g += d * y;
                    }
                });
                self.accumulate(grads, *b, |g| {
                    for ((g, d), x) in g.iter_mut().zip(dy).zip(av) {
                        *g += d * x;
                    }
                });
            }
            Op::Scale(a, factor) => {
                self.accumulate(grads, *a, |g| g.iter_mut().zip(dy).for_each(|(g, d)| *g += d * factor));
            }
            Op::AddRow(x, row) => {
                let n = self.value(*row).numel();
                self.accumulate(grads, *x, |g| g.iter_mut().zip(dy).for_each(|(g, d)| *g += d));
                self.accumulate(grads, *row, |g| {
                    for chunk in dy.chunks(n.max(1)) {
                        for (g, d) in g.iter_mut().zip(chunk) {
                            *g += d;
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                normed,
                inv_std,
            } => {
                let (m, n) = (self.shape(*x)[0], self.shape(*x)[1]);
                let g = self.value(*gain).data();
                if self.requires_grad(*x) {
                    let mut dx = vec![0.0; m * n];
                    for i in 0..m {
                        let mut sum_dh = 0.0;
                        let mut sum_dh_h = 0.0;
                        for j in 0..n {
                            let dh = dy[i * n + j] * g[j];
                            sum_dh += dh;
                            sum_dh_h += dh * normed[i * n + j];
                        }
                        let nf = n as f64;
                        for j in 0..n {
                            let dh = dy[i * n + j] * g[j];
                            dx[i * n + j] = inv_std[i] / nf * (nf * dh - sum_dh - normed[i * n + j] * sum_dh_h);
                        }
                    }
                    self.accumulate(grads, *x, |gx| gx.iter_mut().zip(&dx).for_each(|(g, d)| *g += d));
                }
                self.accumulate(grads, *gain, |gg| {
                    for i in 0..m {
                        for j in 0..n {
                            gg[j] += dy[i * n + j] * normed[i * n + j];
                        }
                    }
                });
                self.accumulate(grads, *bias, |gb| {
                    for i in 0..m {
                        for j in 0..n {
                            gb[j] += dy[i * n + j];
                        }
                    }
                });
            }
            Op::Gelu(x) => {
                let xv = self.value(*x).data();
                self.accumulate(grads, *x, |g| {
                    for ((g, d), &v) in g.iter_mut().zip(dy).zip(xv) {
                        *g += d * gelu_grad(v);
                    }
                });
            }
            Op::Tanh(x) => {
                let yv = node.value.data();
                self.accumulate(grads, *x, |g| {
                    for ((g, d), &y) in g.iter_mut().zip(dy).zip(yv) {
                        *g += d * (1.0 - y * y);
                    }
                });
            }
            Op::Gather { table, indices } => {
                let cols = self.shape(*table)[1];
                self.accumulate(grads, *table, |g| {
                    for (r, &i) in indices.iter().enumerate() {
                        for j in 0..cols {
                            g[i * cols + j] += dy[r * cols + j];
                        }
                    }
                });
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).numel();
                    let slice = &dy[offset..offset + len];
                    self.accumulate(grads, p, |g| g.iter_mut().zip(slice).for_each(|(g, d)| *g += d));
                    offset += len;
                }
            }
            Op::SliceRows { x, start } => {
                let cols = self.shape(*x)[1];
                let base = start * cols;
                self.accumulate(grads, *x, |g| {
                    for (k, d) in dy.iter().enumerate() {
                        g[base + k] += d;
                    }
                });
            }
            Op::L2NormalizeRows { x, norms } => {
                let (m, n) = (self.shape(*x)[0], self.shape(*x)[1]);
                let xv = self.value(*x).data();
                self.accumulate(grads, *x, |g| {
                    for i in 0..m {
                        let norm = norms[i];
                        let s = norm + NORM_EPS;
                        let row = &xv[i * n..(i + 1) * n];
                        let drow = &dy[i * n..(i + 1) * n];
                        let dot: f64 = row.iter().zip(drow).map(|(a, b)| a * b).sum();
                        let coef = if norm > 0.0 { dot / (s * s * norm) } else { 0.0 };
                        for j in 0..n {
                            g[i * n + j] += drow[j] / s - row[j] * coef;
                        }
                    }
                });
            }
            Op::SoftmaxRows(x) => {
                let (m, n) = node.value.rows_cols();
                let yv = node.value.data();
                self.accumulate(grads, *x, |g| {
                    for i in 0..m {
                        let y = &yv[i * n..(i + 1) * n];
                        let d = &dy[i * n..(i + 1) * n];
                        let dot: f64 = y.iter().zip(d).map(|(a, b)| a * b).sum();
                        for j in 0..n {
                            g[i * n + j] += y[j] * (d[j] - dot);
                        }
                    }
                });
            }
            Op::CrossEntropy { logits, labels, probs } => {
                let (b, n) = (self.shape(*logits)[0], self.shape(*logits)[1]);
                let scale = dy[0] / b as f64;
                self.accumulate(grads, *logits, |g| {
                    for (i, &label) in labels.iter().enumerate() {
                        for j in 0..n {
                            let onehot = if j == label { 1.0 } else { 0.0 };
                            g[i * n + j] += scale * (probs[i * n + j] - onehot);
                        }
                    }
                });
            }
            Op::Sum(x) => {
                self.accumulate(grads, *x, |g| g.iter_mut().for_each(|g| *g += dy[0]));
            }
            Op::Mean(x) => {
                let n = self.value(*x).numel() as f64;
                self.accumulate(grads, *x, |g| g.iter_mut().for_each(|g| *g += dy[0] / n));
            }
            Op::Element { x, index } => {
                self.accumulate(grads, *x, |g| g[*index] += dy[0]);
            }
            Op::MulScalar(x, s) => {
                let sv = self.value(*s).item();
                let xv = self.value(*x).data();
                self.accumulate(grads, *x, |g| g.iter_mut().zip(dy).for_each(|(g, d)| *g += d * sv));
                self.accumulate(grads, *s, |g| {
                    g[0] += dy.iter().zip(xv).map(|(d, x)| d * x).sum::<f64>();
                });
            }
        }
    }
}
