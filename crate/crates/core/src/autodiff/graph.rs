use std::sync::Arc;

use super::{GradMap, GraphError, ParamId, Tensor};

const LN_EPS: f64 = 1e-5;
/// Below this product of norms, cosine similarity is defined as 0 with zero gradient.
pub const COSINE_EPS: f64 = 1e-12;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Primitive operation recorded on the tape. Indices refer to parent nodes.
#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    StopGradient(usize),
    MatMul(usize, usize),
    MatMulT(usize, usize),
    Transpose(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddRow(usize, usize),
    Scale(usize, f64),
    Softmax(usize),
    LogSoftmax(usize),
    LogSumExp {
        x: usize,
        excluded: Option<Arc<Vec<bool>>>,
    },
    LayerNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Gelu(usize),
    Tanh(usize),
    Exp(usize),
    Log(usize),
    Clip {
        x: usize,
        lo: f64,
        hi: f64,
    },
    Minimum(usize, usize),
    SelectRows {
        x: usize,
        rows: Vec<usize>,
    },
    PickCols {
        x: usize,
        cols: Vec<usize>,
    },
    SliceRows {
        x: usize,
        start: usize,
    },
    SliceCols {
        x: usize,
        start: usize,
    },
    ConcatRows(Vec<usize>),
    ConcatCols(Vec<usize>),
    CosineRows(usize, usize),
    SqDistRows(usize, usize),
    Sum(usize),
    Mean(usize),
    Reshape(usize),
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::Param(_) => OpKind::Param,
            Op::StopGradient(_) => OpKind::StopGradient,
            Op::MatMul(..) => OpKind::MatMul,
            Op::MatMulT(..) => OpKind::MatMulT,
            Op::Transpose(_) => OpKind::Transpose,
            Op::Add(..) => OpKind::Add,
            Op::Sub(..) => OpKind::Sub,
            Op::Mul(..) => OpKind::Mul,
            Op::AddRow(..) => OpKind::AddRow,
            Op::Scale(..) => OpKind::Scale,
            Op::Softmax(_) => OpKind::Softmax,
            Op::LogSoftmax(_) => OpKind::LogSoftmax,
            Op::LogSumExp { .. } => OpKind::LogSumExp,
            Op::LayerNorm { .. } => OpKind::LayerNorm,
            Op::Gelu(_) => OpKind::Gelu,
            Op::Tanh(_) => OpKind::Tanh,
            Op::Exp(_) => OpKind::Exp,
            Op::Log(_) => OpKind::Log,
            Op::Clip { .. } => OpKind::Clip,
            Op::Minimum(..) => OpKind::Minimum,
            Op::SelectRows { .. } => OpKind::SelectRows,
            Op::PickCols { .. } => OpKind::PickCols,
            Op::SliceRows { .. } => OpKind::SliceRows,
            Op::SliceCols { .. } => OpKind::SliceCols,
            Op::ConcatRows(_) => OpKind::ConcatRows,
            Op::ConcatCols(_) => OpKind::ConcatCols,
            Op::CosineRows(..) => OpKind::CosineRows,
            Op::SqDistRows(..) => OpKind::SqDistRows,
            Op::Sum(_) => OpKind::Sum,
            Op::Mean(_) => OpKind::Mean,
            Op::Reshape(_) => OpKind::Reshape,
        }
    }
}

/// Public tag of a node's primitive, useful for inspection and tests.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OpKind {
    Leaf,
    Param,
    StopGradient,
    MatMul,
    MatMulT,
    Transpose,
    Add,
    Sub,
    Mul,
    AddRow,
    Scale,
    Softmax,
    LogSoftmax,
    LogSumExp,
    LayerNorm,
    Gelu,
    Tanh,
    Exp,
    Log,
    Clip,
    Minimum,
    SelectRows,
    PickCols,
    SliceRows,
    SliceCols,
    ConcatRows,
    ConcatCols,
    CosineRows,
    SqDistRows,
    Sum,
    Mean,
    Reshape,
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Arc<Tensor>,
}

impl Node {
    /// Grad-barrier nodes pass nothing to their parents during backward.
    fn is_barrier(&self) -> bool {
        matches!(self.op, Op::StopGradient(_))
    }
}

/// Tape of primitive operations on 64-bit tensors.
///
/// Nodes are appended in evaluation order, so the tape order is already a
/// topological order and backward is a single reverse sweep.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Result of a reverse sweep: per-node gradients plus the per-parameter map.
#[derive(Debug)]
pub struct Gradients {
    nodes: Vec<Option<Tensor>>,
    params: GradMap,
}

impl Gradients {
    pub fn params(&self) -> &GradMap {
        &self.params
    }

    pub fn into_params(self) -> GradMap {
        self.params
    }

    /// Gradient of the loss with respect to an arbitrary node, if it was reached.
    pub fn node(&self, v: Var) -> Option<&Tensor> {
        self.nodes.get(v.0).and_then(Option::as_ref)
    }
}

fn row_reduced_shape(t: &Tensor) -> Vec<usize> {
    if t.rank() <= 1 {
        Vec::new()
    } else {
        vec![t.rows()]
    }
}

fn mismatch(op: &'static str, shapes: &[&[usize]]) -> GraphError {
    GraphError::ShapeMismatch {
        op,
        shapes: shapes.iter().map(|s| s.to_vec()).collect(),
    }
}

fn softmax_row(x: &[f64], allowed: Option<&[bool]>, out: &mut [f64]) {
    let ok = |j: usize| allowed.is_none_or(|m| m[j]);
    let mut max = f64::NEG_INFINITY;
    for (j, v) in x.iter().enumerate() {
        if ok(j) && *v > max {
            max = *v;
        }
    }
    if max == f64::NEG_INFINITY {
        out.iter_mut().for_each(|o| *o = 0.0);
        return;
    }
    let mut sum = 0.0;
    for (j, v) in x.iter().enumerate() {
        let e = if ok(j) { (v - max).exp() } else { 0.0 };
        out[j] = e;
        sum += e;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// Log-sum-exp of `x`, skipping entries flagged in `excluded`. Shared by the
/// graph op and by plain-value samplers so both produce identical bits.
pub fn logsumexp_row(x: &[f64], excluded: Option<&[bool]>) -> f64 {
    let ok = |j: usize| excluded.is_none_or(|m| !m[j]);
    let mut max = f64::NEG_INFINITY;
    for (j, v) in x.iter().enumerate() {
        if ok(j) && *v > max {
            max = *v;
        }
    }
    let mut sum = 0.0;
    for (j, v) in x.iter().enumerate() {
        if ok(j) {
            sum += (v - max).exp();
        }
    }
    max + sum.ln()
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

    pub fn kind(&self, v: Var) -> OpKind {
        self.nodes[v.0].op.kind()
    }

    pub fn is_barrier(&self, v: Var) -> bool {
        self.nodes[v.0].is_barrier()
    }

    /// Direct inputs of a node, in argument order.
    pub fn parents(&self, v: Var) -> Vec<Var> {
        let idx: Vec<usize> = match &self.nodes[v.0].op {
            Op::Leaf | Op::Param(_) => vec![],
            Op::StopGradient(a)
            | Op::Transpose(a)
            | Op::Scale(a, _)
            | Op::Softmax(a)
            | Op::LogSoftmax(a)
            | Op::LogSumExp { x: a, .. }
            | Op::Gelu(a)
            | Op::Tanh(a)
            | Op::Exp(a)
            | Op::Log(a)
            | Op::Clip { x: a, .. }
            | Op::SelectRows { x: a, .. }
            | Op::PickCols { x: a, .. }
            | Op::SliceRows { x: a, .. }
            | Op::SliceCols { x: a, .. }
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::Reshape(a) => vec![*a],
            Op::MatMul(a, b)
            | Op::MatMulT(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::AddRow(a, b)
            | Op::Minimum(a, b)
            | Op::CosineRows(a, b)
            | Op::SqDistRows(a, b) => vec![*a, *b],
            Op::LayerNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Op::ConcatRows(p) | Op::ConcatCols(p) => p.clone(),
        };
        idx.into_iter().map(Var).collect()
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        self.push_shared(op, Arc::new(value))
    }

    fn push_shared(&mut self, op: Op, value: Arc<Tensor>) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    fn val(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn matrix_dims(&self, v: Var, op: &'static str) -> Result<(usize, usize), GraphError> {
        let t = self.val(v);
        if t.rank() != 2 {
            return Err(mismatch(op, &[t.shape()]));
        }
        Ok((t.shape()[0], t.shape()[1]))
    }

    fn same_shape(&self, a: Var, b: Var, op: &'static str) -> Result<(), GraphError> {
        let (sa, sb) = (self.val(a).shape(), self.val(b).shape());
        if sa != sb {
            return Err(mismatch(op, &[sa, sb]));
        }
        Ok(())
    }

    /// Constant input; receives gradient but has no parents.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(Op::Leaf, t)
    }

    /// Constant input sharing an existing buffer.
    pub fn constant_shared(&mut self, t: Arc<Tensor>) -> Var {
        self.push_shared(Op::Leaf, t)
    }

    pub fn scalar(&mut self, v: f64) -> Var {
        self.constant(Tensor::scalar(v))
    }

    /// Trainable leaf bound to a parameter id.
    pub fn param(&mut self, id: ParamId, value: Arc<Tensor>) -> Var {
        self.push_shared(Op::Param(id), value)
    }

    /// Identity on values; contributes zero gradient to `x` and its ancestors.
    pub fn stop_gradient(&mut self, x: Var) -> Var {
        let value = Arc::clone(&self.nodes[x.0].value);
        self.push_shared(Op::StopGradient(x.0), value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, GraphError> {
        let (m, k) = self.matrix_dims(a, "matmul")?;
        let (k2, n) = self.matrix_dims(b, "matmul")?;
        if k != k2 {
            return Err(mismatch("matmul", &[self.val(a).shape(), self.val(b).shape()]));
        }
        let (ad, bd) = (self.val(a).data(), self.val(b).data());
        let mut out = vec![0.0; m * n];
        matmul_into(ad, bd, &mut out, m, k, n);
        Ok(self.push(Op::MatMul(a.0, b.0), Tensor::matrix(m, n, out)))
    }

    /// `a · bᵀ` without materializing the transpose.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var, GraphError> {
        let (m, k) = self.matrix_dims(a, "matmul_t")?;
        let (n, k2) = self.matrix_dims(b, "matmul_t")?;
        if k != k2 {
            return Err(mismatch("matmul_t", &[self.val(a).shape(), self.val(b).shape()]));
        }
        let (ad, bd) = (self.val(a).data(), self.val(b).data());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let ar = &ad[i * k..(i + 1) * k];
            for j in 0..n {
                let br = &bd[j * k..(j + 1) * k];
                out[i * n + j] = dot(ar, br);
            }
        }
        Ok(self.push(Op::MatMulT(a.0, b.0), Tensor::matrix(m, n, out)))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, GraphError> {
        let (m, n) = self.matrix_dims(a, "transpose")?;
        let ad = self.val(a).data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = ad[i * n + j];
            }
        }
        Ok(self.push(Op::Transpose(a.0), Tensor::matrix(n, m, out)))
    }

    fn zip_with(
        &mut self,
        a: Var,
        b: Var,
        op_name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var, GraphError> {
        self.same_shape(a, b, op_name)?;
        let (ta, tb) = (self.val(a), self.val(b));
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| f(*x, *y)).collect();
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(op, t))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, GraphError> {
        self.zip_with(a, b, "add", |x, y| x + y, Op::Add(a.0, b.0))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, GraphError> {
        self.zip_with(a, b, "sub", |x, y| x - y, Op::Sub(a.0, b.0))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, GraphError> {
        self.zip_with(a, b, "mul", |x, y| x * y, Op::Mul(a.0, b.0))
    }

    /// Elementwise minimum; ties route the gradient to `a`.
    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var, GraphError> {
        self.zip_with(a, b, "minimum", f64::min, Op::Minimum(a.0, b.0))
    }

    /// Adds a length-`n` vector to every row of an `m × n` matrix.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var, GraphError> {
        let (m, n) = self.matrix_dims(x, "add_row")?;
        let r = self.val(row);
        if r.len() != n || r.rank() != 1 {
            return Err(mismatch("add_row", &[self.val(x).shape(), r.shape()]));
        }
        let (xd, rd) = (self.val(x).data(), r.data());
        let mut out = xd.to_vec();
        for i in 0..m {
            for j in 0..n {
                out[i * n + j] += rd[j];
            }
        }
        Ok(self.push(Op::AddRow(x.0, row.0), Tensor::matrix(m, n, out)))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let t = self.val(x);
        let data = t.data().iter().map(|v| v * c).collect();
        let out = Tensor::new(t.shape().to_vec(), data).expect("same shape");
        self.push(Op::Scale(x.0, c), out)
    }

    fn map(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let t = self.val(x);
        let data = t.data().iter().map(|v| f(*v)).collect();
        let out = Tensor::new(t.shape().to_vec(), data).expect("same shape");
        self.push(op, out)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.map(x, f64::exp, Op::Exp(x.0))
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.map(x, f64::ln, Op::Log(x.0))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.map(x, f64::tanh, Op::Tanh(x.0))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Var {
        self.map(
            x,
            |v| 0.5 * v * (1.0 + (GELU_C * (v + GELU_A * v * v * v)).tanh()),
            Op::Gelu(x.0),
        )
    }

    /// Clamp to `[lo, hi]`; the gradient passes where `lo <= x <= hi` and is zero outside.
    pub fn clip(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        self.map(x, |v| v.clamp(lo, hi), Op::Clip { x: x.0, lo, hi })
    }

    /// Row-wise softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var, GraphError> {
        self.softmax_impl(x, None)
    }

    /// Row-wise softmax restricted to entries where `allowed` is true; the
    /// remaining outputs are exactly zero. `allowed` is row-major, same size as `x`.
    pub fn masked_softmax(&mut self, x: Var, allowed: Arc<Vec<bool>>) -> Result<Var, GraphError> {
        if allowed.len() != self.val(x).len() {
            return Err(mismatch("masked_softmax", &[self.val(x).shape(), &[allowed.len()]]));
        }
        self.softmax_impl(x, Some(allowed))
    }

    fn softmax_impl(&mut self, x: Var, mask: Option<Arc<Vec<bool>>>) -> Result<Var, GraphError> {
        let t = self.val(x);
        if t.rank() == 0 {
            return Err(mismatch("softmax", &[t.shape()]));
        }
        let (rows, cols) = (t.rows(), t.cols());
        let mut out = vec![0.0; t.len()];
        for i in 0..rows {
            let m = mask.as_ref().map(|m| &m[i * cols..(i + 1) * cols]);
            softmax_row(t.row(i), m, &mut out[i * cols..(i + 1) * cols]);
        }
        let value = Tensor::new(t.shape().to_vec(), out)?;
        Ok(self.push(Op::Softmax(x.0), value))
    }

    pub fn log_softmax(&mut self, x: Var) -> Result<Var, GraphError> {
        let t = self.val(x);
        if t.rank() == 0 {
            return Err(mismatch("log_softmax", &[t.shape()]));
        }
        let (rows, cols) = (t.rows(), t.cols());
        let mut out = vec![0.0; t.len()];
        for i in 0..rows {
            let lse = logsumexp_row(t.row(i), None);
            for (o, v) in out[i * cols..(i + 1) * cols].iter_mut().zip(t.row(i)) {
                *o = v - lse;
            }
        }
        let value = Tensor::new(t.shape().to_vec(), out)?;
        Ok(self.push(Op::LogSoftmax(x.0), value))
    }

    /// Row-wise log-sum-exp, skipping columns flagged in `excluded`.
    pub fn logsumexp_rows(
        &mut self,
        x: Var,
        excluded: Option<Arc<Vec<bool>>>,
    ) -> Result<Var, GraphError> {
        let t = self.val(x);
        if t.rank() == 0 {
            return Err(mismatch("logsumexp_rows", &[t.shape()]));
        }
        if let Some(e) = &excluded {
            if e.len() != t.cols() {
                return Err(mismatch("logsumexp_rows", &[t.shape(), &[e.len()]]));
            }
        }
        let out: Vec<f64> = (0..t.rows())
            .map(|i| logsumexp_row(t.row(i), excluded.as_deref().map(Vec::as_slice)))
            .collect();
        let value = Tensor::new(row_reduced_shape(t), out)?;
        Ok(self.push(Op::LogSumExp { x: x.0, excluded }, value))
    }

    /// Row-wise layer normalization with affine `gamma`, `beta` of length `n`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var, GraphError> {
        let (m, n) = self.matrix_dims(x, "layer_norm")?;
        let (g, b) = (self.val(gamma), self.val(beta));
        if g.len() != n || b.len() != n {
            return Err(mismatch("layer_norm", &[self.val(x).shape(), g.shape(), b.shape()]));
        }
        let xd = self.val(x).data();
        let mut xhat = vec![0.0; m * n];
        let mut rstd = vec![0.0; m];
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &xd[i * n..(i + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let r = 1.0 / (var + LN_EPS).sqrt();
            rstd[i] = r;
            for j in 0..n {
                let h = (row[j] - mean) * r;
                xhat[i * n + j] = h;
                out[i * n + j] = h * g.data()[j] + b.data()[j];
            }
        }
        let op = Op::LayerNorm {
            x: x.0,
            gamma: gamma.0,
            beta: beta.0,
            xhat,
            rstd,
        };
        Ok(self.push(op, Tensor::matrix(m, n, out)))
    }

    /// Gathers rows of a matrix; doubles as embedding lookup.
    pub fn select_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var, GraphError> {
        let (m, n) = self.matrix_dims(x, "select_rows")?;
        if let Some(&bad) = rows.iter().find(|&&r| r >= m) {
            return Err(GraphError::IndexOutOfRange {
                op: "select_rows",
                index: bad,
                bound: m,
            });
        }
        let xd = self.val(x).data();
        let mut out = Vec::with_capacity(rows.len() * n);
        for &r in rows {
            out.extend_from_slice(&xd[r * n..(r + 1) * n]);
        }
        let op = Op::SelectRows {
            x: x.0,
            rows: rows.to_vec(),
        };
        Ok(self.push(op, Tensor::matrix(rows.len(), n, out)))
    }

    /// Picks `x[i, cols[i]]` from each row, producing a vector.
    pub fn pick_cols(&mut self, x: Var, cols: &[usize]) -> Result<Var, GraphError> {
        let (m, n) = self.matrix_dims(x, "pick_cols")?;
        if cols.len() != m {
            return Err(mismatch("pick_cols", &[self.val(x).shape(), &[cols.len()]]));
        }
        if let Some(&bad) = cols.iter().find(|&&c| c >= n) {
            return Err(GraphError::IndexOutOfRange {
                op: "pick_cols",
                index: bad,
                bound: n,
            });
        }
        let xd = self.val(x).data();
        let out = cols.iter().enumerate().map(|(i, &c)| xd[i * n + c]).collect();
        let op = Op::PickCols {
            x: x.0,
            cols: cols.to_vec(),
        };
        Ok(self.push(op, Tensor::vector(out)))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var, GraphError> {
        let (m, n) = self.matrix_dims(x, "slice_rows")?;
        if start + len > m {
            return Err(GraphError::IndexOutOfRange {
                op: "slice_rows",
                index: start + len,
                bound: m,
            });
        }
        let out = self.val(x).data()[start * n..(start + len) * n].to_vec();
        Ok(self.push(Op::SliceRows { x: x.0, start }, Tensor::matrix(len, n, out)))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var, GraphError> {
        let (m, n) = self.matrix_dims(x, "slice_cols")?;
        if start + len > n {
            return Err(GraphError::IndexOutOfRange {
                op: "slice_cols",
                index: start + len,
                bound: n,
            });
        }
        let xd = self.val(x).data();
        let mut out = Vec::with_capacity(m * len);
        for i in 0..m {
            out.extend_from_slice(&xd[i * n + start..i * n + start + len]);
        }
        Ok(self.push(Op::SliceCols { x: x.0, start }, Tensor::matrix(m, len, out)))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, GraphError> {
        if parts.is_empty() {
            return Err(mismatch("concat_rows", &[]));
        }
        let n = self.matrix_dims(parts[0], "concat_rows")?.1;
        let mut out = Vec::new();
        let mut m = 0;
        for &p in parts {
            let (pm, pn) = self.matrix_dims(p, "concat_rows")?;
            if pn != n {
                return Err(mismatch("concat_rows", &[self.val(parts[0]).shape(), self.val(p).shape()]));
            }
            out.extend_from_slice(self.val(p).data());
            m += pm;
        }
        let op = Op::ConcatRows(parts.iter().map(|v| v.0).collect());
        Ok(self.push(op, Tensor::matrix(m, n, out)))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, GraphError> {
        if parts.is_empty() {
            return Err(mismatch("concat_cols", &[]));
        }
        let m = self.matrix_dims(parts[0], "concat_cols")?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pm, pn) = self.matrix_dims(p, "concat_cols")?;
            if pm != m {
                return Err(mismatch("concat_cols", &[self.val(parts[0]).shape(), self.val(p).shape()]));
            }
            widths.push(pn);
        }
        let n: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.val(p).data()[i * w..(i + 1) * w]);
            }
        }
        let op = Op::ConcatCols(parts.iter().map(|v| v.0).collect());
        Ok(self.push(op, Tensor::matrix(m, n, out)))
    }

    /// Row-wise cosine similarity. Rank-1 inputs give a scalar.
    ///
    /// When `|a|·|b| <= COSINE_EPS` the similarity is 0 and no gradient flows.
    pub fn cosine_rows(&mut self, a: Var, b: Var) -> Result<Var, GraphError> {
        self.same_shape(a, b, "cosine_similarity")?;
        let (ta, tb) = (self.val(a), self.val(b));
        let out = (0..ta.rows())
            .map(|i| {
                let (x, y) = (ta.row(i), tb.row(i));
                let denom = dot(x, x).sqrt() * dot(y, y).sqrt();
                if denom <= COSINE_EPS {
                    0.0
                } else {
                    dot(x, y) / denom
                }
            })
            .collect();
        let value = Tensor::new(row_reduced_shape(ta), out)?;
        Ok(self.push(Op::CosineRows(a.0, b.0), value))
    }

    /// Cosine similarity of two vectors.
    pub fn cosine_similarity(&mut self, a: Var, b: Var) -> Result<Var, GraphError> {
        self.cosine_rows(a, b)
    }

    /// Row-wise squared Euclidean distance. Rank-1 inputs give a scalar.
    pub fn sq_dist_rows(&mut self, a: Var, b: Var) -> Result<Var, GraphError> {
        self.same_shape(a, b, "sq_dist")?;
        let (ta, tb) = (self.val(a), self.val(b));
        let out = (0..ta.rows())
            .map(|i| ta.row(i).iter().zip(tb.row(i)).map(|(x, y)| (x - y) * (x - y)).sum())
            .collect();
        let value = Tensor::new(row_reduced_shape(ta), out)?;
        Ok(self.push(Op::SqDistRows(a.0, b.0), value))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.val(x).data().iter().sum();
        self.push(Op::Sum(x.0), Tensor::scalar(s))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.val(x);
        let s = t.data().iter().sum::<f64>() / t.len().max(1) as f64;
        self.push(Op::Mean(x.0), Tensor::scalar(s))
    }

    /// `sum(a ⊙ b)`
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var, GraphError> {
        let p = self.mul(a, b)?;
        Ok(self.sum(p))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, GraphError> {
        let t = (*self.nodes[x.0].value).clone().reshaped(shape)?;
        Ok(self.push(Op::Reshape(x.0), t))
    }

    /// Reverse sweep from a scalar loss.
    ///
    /// Every node is visited at most once, in reverse tape order. Parameters
    /// reachable only through grad-barriers get no entry in the parameter map.
    pub fn backward(&self, loss: Var) -> Result<Gradients, GraphError> {
        let lv = self.val(loss);
        if lv.len() != 1 {
            return Err(GraphError::NonScalarLoss {
                shape: lv.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[loss.0] = Some(Tensor::full(lv.shape(), 1.0));
        let mut params = GradMap::new();
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Param(id) => params.accumulate(*id, &g),
                _ if node.is_barrier() => {}
                _ => self.propagate(i, &g, &mut grads)?,
            }
            grads[i] = Some(g);
        }
        Ok(Gradients {
            nodes: grads,
            params,
        })
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<(), GraphError> {
        let node = &self.nodes[i];
        let y = &node.value;
        let gd = g.data();
        match &node.op {
            Op::Leaf | Op::Param(_) | Op::StopGradient(_) => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.val(Var(*a)), self.val(Var(*b)));
                let (m, k) = (ta.shape()[0], ta.shape()[1]);
                let n = tb.shape()[1];
                let mut da = vec![0.0; m * k];
                for i in 0..m {
                    let gr = &gd[i * n..(i + 1) * n];
                    for p in 0..k {
                        da[i * k + p] = dot(gr, &tb.data()[p * n..(p + 1) * n]);
                    }
                }
                let mut db = vec![0.0; k * n];
                for i in 0..m {
                    let gr = &gd[i * n..(i + 1) * n];
                    for p in 0..k {
                        let av = ta.data()[i * k + p];
                        if av == 0.0 {
                            continue;
                        }
                        axpy(av, gr, &mut db[p * n..(p + 1) * n]);
                    }
                }
                accumulate(grads, *a, Tensor::matrix(m, k, da));
                accumulate(grads, *b, Tensor::matrix(k, n, db));
            }
            Op::MatMulT(a, b) => {
                let (ta, tb) = (self.val(Var(*a)), self.val(Var(*b)));
                let (m, k) = (ta.shape()[0], ta.shape()[1]);
                let n = tb.shape()[0];
                let mut da = vec![0.0; m * k];
                matmul_into(gd, tb.data(), &mut da, m, n, k);
                let mut db = vec![0.0; n * k];
                for i in 0..m {
                    let ar = &ta.data()[i * k..(i + 1) * k];
                    for j in 0..n {
                        let gv = gd[i * n + j];
                        if gv != 0.0 {
                            axpy(gv, ar, &mut db[j * k..(j + 1) * k]);
                        }
                    }
                }
                accumulate(grads, *a, Tensor::matrix(m, k, da));
                accumulate(grads, *b, Tensor::matrix(n, k, db));
            }
            Op::Transpose(a) => {
                let (m, n) = (y.shape()[0], y.shape()[1]);
                let mut out = vec![0.0; m * n];
                for i in 0..m {
                    for j in 0..n {
                        out[j * m + i] = gd[i * n + j];
                    }
                }
                accumulate(grads, *a, Tensor::matrix(n, m, out));
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                accumulate(grads, *a, g.clone());
                let mut neg = g.clone();
                neg.scale_assign(-1.0);
                accumulate(grads, *b, neg);
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.val(Var(*a)), self.val(Var(*b)));
                let da = gd.iter().zip(tb.data()).map(|(g, v)| g * v).collect();
                let db = gd.iter().zip(ta.data()).map(|(g, v)| g * v).collect();
                accumulate(grads, *a, Tensor::new(ta.shape().to_vec(), da)?);
                accumulate(grads, *b, Tensor::new(tb.shape().to_vec(), db)?);
            }
            Op::Minimum(a, b) => {
                let (ta, tb) = (self.val(Var(*a)), self.val(Var(*b)));
                let mut da = vec![0.0; gd.len()];
                let mut db = vec![0.0; gd.len()];
                for j in 0..gd.len() {
                    if ta.data()[j] <= tb.data()[j] {
                        da[j] = gd[j];
                    } else {
                        db[j] = gd[j];
                    }
                }
                accumulate(grads, *a, Tensor::new(ta.shape().to_vec(), da)?);
                accumulate(grads, *b, Tensor::new(tb.shape().to_vec(), db)?);
            }
            Op::AddRow(x, r) => {
                let (m, n) = (y.shape()[0], y.shape()[1]);
                let mut dr = vec![0.0; n];
                for i in 0..m {
                    axpy(1.0, &gd[i * n..(i + 1) * n], &mut dr);
                }
                accumulate(grads, *x, g.clone());
                accumulate(grads, *r, Tensor::vector(dr));
            }
            Op::Scale(x, c) => {
                let mut s = g.clone();
                s.scale_assign(*c);
                accumulate(grads, *x, s);
            }
            Op::Softmax(x) => {
                let cols = y.cols();
                let mut dx = vec![0.0; y.len()];
                for r in 0..y.rows() {
                    let yr = y.row(r);
                    let gr = &gd[r * cols..(r + 1) * cols];
                    let s = dot(yr, gr);
                    for j in 0..cols {
                        dx[r * cols + j] = yr[j] * (gr[j] - s);
                    }
                }
                accumulate(grads, *x, Tensor::new(y.shape().to_vec(), dx)?);
            }
            Op::LogSoftmax(x) => {
                let cols = y.cols();
                let mut dx = vec![0.0; y.len()];
                for r in 0..y.rows() {
                    let yr = y.row(r);
                    let gr = &gd[r * cols..(r + 1) * cols];
                    let s: f64 = gr.iter().sum();
                    for j in 0..cols {
                        dx[r * cols + j] = gr[j] - yr[j].exp() * s;
                    }
                }
                accumulate(grads, *x, Tensor::new(y.shape().to_vec(), dx)?);
            }
            Op::LogSumExp { x, excluded } => {
                let tx = self.val(Var(*x));
                let cols = tx.cols();
                let mut dx = vec![0.0; tx.len()];
                for r in 0..tx.rows() {
                    let lse = y.data()[r];
                    for j in 0..cols {
                        if excluded.as_ref().is_some_and(|e| e[j]) {
                            continue;
                        }
                        dx[r * cols + j] = gd[r] * (tx.row(r)[j] - lse).exp();
                    }
                }
                accumulate(grads, *x, Tensor::new(tx.shape().to_vec(), dx)?);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let (m, n) = (y.shape()[0], y.shape()[1]);
                let gam = self.val(Var(*gamma)).data();
                let mut dx = vec![0.0; m * n];
                let mut dgamma = vec![0.0; n];
                let mut dbeta = vec![0.0; n];
                let mut dxhat = vec![0.0; n];
                for i in 0..m {
                    let gr = &gd[i * n..(i + 1) * n];
                    let xh = &xhat[i * n..(i + 1) * n];
                    for j in 0..n {
                        dgamma[j] += gr[j] * xh[j];
                        dbeta[j] += gr[j];
                        dxhat[j] = gr[j] * gam[j];
                    }
                    let mean_d = dxhat.iter().sum::<f64>() / n as f64;
                    let mean_dx = dot(&dxhat, xh) / n as f64;
                    for j in 0..n {
                        dx[i * n + j] = rstd[i] * (dxhat[j] - mean_d - xh[j] * mean_dx);
                    }
                }
                accumulate(grads, *x, Tensor::matrix(m, n, dx));
                accumulate(grads, *gamma, Tensor::vector(dgamma));
                accumulate(grads, *beta, Tensor::vector(dbeta));
            }
            Op::Gelu(x) => {
                let tx = self.val(Var(*x));
                let dx = tx
                    .data()
                    .iter()
                    .zip(gd)
                    .map(|(&v, &g)| {
                        let t = (GELU_C * (v + GELU_A * v * v * v)).tanh();
                        let d = 0.5 * (1.0 + t)
                            + 0.5 * v * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * v * v);
                        g * d
                    })
                    .collect();
                accumulate(grads, *x, Tensor::new(tx.shape().to_vec(), dx)?);
            }
            Op::Tanh(x) => {
                let dx = y.data().iter().zip(gd).map(|(t, g)| g * (1.0 - t * t)).collect();
                accumulate(grads, *x, Tensor::new(y.shape().to_vec(), dx)?);
            }
            Op::Exp(x) => {
                let dx = y.data().iter().zip(gd).map(|(e, g)| g * e).collect();
                accumulate(grads, *x, Tensor::new(y.shape().to_vec(), dx)?);
            }
            Op::Log(x) => {
                let tx = self.val(Var(*x));
                let dx = tx.data().iter().zip(gd).map(|(v, g)| g / v).collect();
                accumulate(grads, *x, Tensor::new(y.shape().to_vec(), dx)?);
            }
            Op::Clip { x, lo, hi } => {
                let tx = self.val(Var(*x));
                let dx = tx
                    .data()
                    .iter()
                    .zip(gd)
                    .map(|(v, g)| if *v >= *lo && *v <= *hi { *g } else { 0.0 })
                    .collect();
                accumulate(grads, *x, Tensor::new(y.shape().to_vec(), dx)?);
            }
            Op::SelectRows { x, rows } => {
                let shape = self.val(Var(*x)).shape().to_vec();
                let n = shape[1];
                let slot = slot(grads, *x, &shape);
                for (k, &r) in rows.iter().enumerate() {
                    axpy(1.0, &gd[k * n..(k + 1) * n], &mut slot.data_mut()[r * n..(r + 1) * n]);
                }
            }
            Op::PickCols { x, cols } => {
                let shape = self.val(Var(*x)).shape().to_vec();
                let n = shape[1];
                let slot = slot(grads, *x, &shape);
                for (i, &c) in cols.iter().enumerate() {
                    slot.data_mut()[i * n + c] += gd[i];
                }
            }
            Op::SliceRows { x, start } => {
                let shape = self.val(Var(*x)).shape().to_vec();
                let n = shape[1];
                let slot = slot(grads, *x, &shape);
                axpy(1.0, gd, &mut slot.data_mut()[start * n..start * n + gd.len()]);
            }
            Op::SliceCols { x, start } => {
                let shape = self.val(Var(*x)).shape().to_vec();
                let n = shape[1];
                let len = y.shape()[1];
                let slot = slot(grads, *x, &shape);
                for i in 0..y.shape()[0] {
                    axpy(
                        1.0,
                        &gd[i * len..(i + 1) * len],
                        &mut slot.data_mut()[i * n + start..i * n + start + len],
                    );
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let shape = self.val(Var(p)).shape().to_vec();
                    let len: usize = shape.iter().product();
                    let part = Tensor::new(shape, gd[offset..offset + len].to_vec())?;
                    accumulate(grads, p, part);
                    offset += len;
                }
            }
            Op::ConcatCols(parts) => {
                let (m, n) = (y.shape()[0], y.shape()[1]);
                let mut col = 0;
                for &p in parts {
                    let w = self.val(Var(p)).shape()[1];
                    let mut out = Vec::with_capacity(m * w);
                    for i in 0..m {
                        out.extend_from_slice(&gd[i * n + col..i * n + col + w]);
                    }
                    accumulate(grads, p, Tensor::matrix(m, w, out));
                    col += w;
                }
            }
            Op::CosineRows(a, b) => {
                let (ta, tb) = (self.val(Var(*a)), self.val(Var(*b)));
                let cols = ta.cols();
                let mut da = vec![0.0; ta.len()];
                let mut db = vec![0.0; tb.len()];
                for r in 0..ta.rows() {
                    let (x, z) = (ta.row(r), tb.row(r));
                    let (nx, nz) = (dot(x, x).sqrt(), dot(z, z).sqrt());
                    if nx * nz <= COSINE_EPS {
                        continue;
                    }
                    let c = y.data()[r];
                    let gr = gd[r];
                    for j in 0..cols {
                        da[r * cols + j] = gr * (z[j] / (nx * nz) - c * x[j] / (nx * nx));
                        db[r * cols + j] = gr * (x[j] / (nx * nz) - c * z[j] / (nz * nz));
                    }
                }
                accumulate(grads, *a, Tensor::new(ta.shape().to_vec(), da)?);
                accumulate(grads, *b, Tensor::new(tb.shape().to_vec(), db)?);
            }
            Op::SqDistRows(a, b) => {
                let (ta, tb) = (self.val(Var(*a)), self.val(Var(*b)));
                let cols = ta.cols();
                let mut da = vec![0.0; ta.len()];
                for r in 0..ta.rows() {
                    for j in 0..cols {
                        da[r * cols + j] = 2.0 * gd[r] * (ta.row(r)[j] - tb.row(r)[j]);
                    }
                }
                let db = da.iter().map(|v| -v).collect();
                accumulate(grads, *a, Tensor::new(ta.shape().to_vec(), da)?);
                accumulate(grads, *b, Tensor::new(tb.shape().to_vec(), db)?);
            }
            Op::Sum(x) => {
                let shape = self.val(Var(*x)).shape().to_vec();
                accumulate(grads, *x, Tensor::full(&shape, gd[0]));
            }
            Op::Mean(x) => {
                let t = self.val(Var(*x));
                let shape = t.shape().to_vec();
                accumulate(grads, *x, Tensor::full(&shape, gd[0] / t.len().max(1) as f64));
            }
            Op::Reshape(x) => {
                let shape = self.val(Var(*x)).shape().to_vec();
                accumulate(grads, *x, g.clone().reshaped(&shape)?);
            }
        }
        Ok(())
    }
}

fn accumulate(grads: &mut [Option<Tensor>], idx: usize, t: Tensor) {
    match &mut grads[idx] {
        Some(existing) => existing.add_assign(&t),
        slot @ None => *slot = Some(t),
    }
}

fn slot<'a>(grads: &'a mut [Option<Tensor>], idx: usize, shape: &[usize]) -> &'a mut Tensor {
    grads[idx].get_or_insert_with(|| Tensor::zeros(shape))
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `out[m×n] += a[m×k] · b[k×n]`, row by row in ascending `k`, skipping zero
/// entries of `a`. Row results do not depend on how many rows are processed
/// together, which keeps chunked and full forward passes bit-identical.
fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            axpy(av, &b[p * n..(p + 1) * n], row);
        }
    }
}
