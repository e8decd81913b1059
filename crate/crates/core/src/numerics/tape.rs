//! Reverse-mode differentiation over a recorded list of tensor operations.
//!
//! Every method on [`Tape`] evaluates its primitive eagerly, appends a node to
//! the record, and returns a [`Var`] handle. [`Tape::backward`] walks the record
//! in reverse and returns gradients for every trainable parameter that fed the
//! scalar loss.

use std::borrow::Cow;

use super::params::{GradientMap, ParamId, ParamStore};
use super::tensor::{dot, gemm_nn, gemm_nt, gemm_tn, Tensor};
use crate::error::{Error, Result};

/// Clamp applied to probabilities before taking logarithms in [`Tape::bce`].
pub const PROB_EPS: f64 = 1e-12;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Constant,
    Param(String),
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Softmax { x: Var, axis: usize },
    Sum(Var),
    MeanRows(Var),
    RowDot(Var, Var),
    Conv1d { kernels: Var, bias: Var, x: Var, cols: Vec<f64>, width: usize },
    Embedding { table: Var, ids: Vec<usize>, skip: Option<usize> },
    GatherRows { x: Var, rows: Vec<usize> },
    ConcatCols(Vec<Var>),
    Reshape(Var),
    Clamp { x: Var, lo: f64, hi: f64 },
    Bce { probs: Var, targets: Vec<f64> },
}

#[derive(Debug)]
struct Node<'p> {
    value: Cow<'p, Tensor>,
    op: Op,
    needs_grad: bool,
}

/// The computation record. Parameters are borrowed, not copied.
#[derive(Debug, Default)]
pub struct Tape<'p> {
    nodes: Vec<Node<'p>>,
}

impl<'p> Tape<'p> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
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
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Cow<'p, Tensor>, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_owned(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let needs = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.push(Cow::Owned(value), op, needs)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(Cow::Owned(t), Op::Constant, false)
    }

    pub fn constant_ref(&mut self, t: &'p Tensor) -> Var {
        self.push(Cow::Borrowed(t), Op::Constant, false)
    }

    /// Binds a stored parameter. Frozen parameters enter as constants.
    pub fn param(&mut self, store: &'p ParamStore, id: ParamId) -> Var {
        let p = store.get(id);
        if p.frozen {
            self.push(Cow::Borrowed(&p.value), Op::Constant, false)
        } else {
            self.push(Cow::Borrowed(&p.value), Op::Param(p.name.clone()), true)
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.value(a).dims2()?;
        let (k2, n) = self.value(b).dims2()?;
        if k != k2 {
            return Err(Error::shape("matmul", self.shape(a), self.shape(b)));
        }
        let mut out = vec![0.0; m * n];
        gemm_nn(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let t = Tensor::new(vec![m, n], out)?;
        Ok(self.push_owned(t, Op::MatMul(a, b), &[a, b]))
    }

    /// `a · bᵀ` for `a: [m×k]`, `b: [n×k]`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.value(a).dims2()?;
        let (n, k2) = self.value(b).dims2()?;
        if k != k2 {
            return Err(Error::shape("matmul_t", self.shape(a), self.shape(b)));
        }
        let mut out = vec![0.0; m * n];
        gemm_nt(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let t = Tensor::new(vec![m, n], out)?;
        Ok(self.push_owned(t, Op::MatMulT(a, b), &[a, b]))
    }

    fn zip_same(&self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape(op, ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| f(*x, *y)).collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same("add", a, b, |x, y| x + y)?;
        Ok(self.push_owned(t, Op::Add(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same("mul", a, b, |x, y| x * y)?;
        Ok(self.push_owned(t, Op::Mul(a, b), &[a, b]))
    }

    /// Adds the vector `row: [n]` to every row of `x: [m×n]`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (m, n) = self.value(x).dims2()?;
        if self.shape(row) != [n] {
            return Err(Error::shape("add_row", self.shape(x), self.shape(row)));
        }
        let r = self.value(row).data();
        let mut out = self.value(x).data().to_vec();
        for i in 0..m {
            for (o, b) in out[i * n..(i + 1) * n].iter_mut().zip(r) {
                *o += b;
            }
        }
        let t = Tensor::new(vec![m, n], out)?;
        Ok(self.push_owned(t, Op::AddRow(x, row), &[x, row]))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let tx = self.value(x);
        let t = Tensor::new(tx.shape().to_vec(), tx.data().iter().map(|v| v * c).collect())
            .expect("same shape");
        self.push_owned(t, Op::Scale(x, c), &[x])
    }

    fn map(&self, x: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let tx = self.value(x);
        Tensor::new(tx.shape().to_vec(), tx.data().iter().map(|v| f(*v)).collect())
            .expect("same shape")
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let t = self.map(x, sigmoid);
        self.push_owned(t, Op::Sigmoid(x), &[x])
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let t = self.map(x, f64::tanh);
        self.push_owned(t, Op::Tanh(x), &[x])
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let t = self.map(x, |v| v.clamp(lo, hi));
        self.push_owned(t, Op::Clamp { x, lo, hi }, &[x])
    }

    /// Numerically stable softmax along `axis` (max-subtracted).
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let tx = self.value(x);
        if axis >= tx.rank() {
            return Err(Error::Contract(format!(
                "softmax axis {axis} out of range for shape {:?}",
                tx.shape()
            )));
        }
        let (outer, len, inner) = axis_split(tx.shape(), axis);
        let src = tx.data();
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            for j in 0..inner {
                let idx = |i: usize| (o * len + i) * inner + j;
                let max = (0..len).map(|i| src[idx(i)]).fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for i in 0..len {
                    let e = (src[idx(i)] - max).exp();
                    out[idx(i)] = e;
                    total += e;
                }
                for i in 0..len {
                    out[idx(i)] /= total;
                }
            }
        }
        let t = Tensor::new(tx.shape().to_vec(), out)?;
        Ok(self.push_owned(t, Op::Softmax { x, axis }, &[x]))
    }

    /// Sum of all elements, as a `[1]` tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        self.push_owned(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    /// Column means of `x: [m×n]`, giving `[n]`.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let (m, n) = self.value(x).dims2()?;
        if m == 0 {
            return Err(Error::Contract("mean over zero rows".into()));
        }
        let mut out = vec![0.0; n];
        for i in 0..m {
            for (o, v) in out.iter_mut().zip(self.value(x).row(i)) {
                *o += v;
            }
        }
        for o in &mut out {
            *o /= m as f64;
        }
        Ok(self.push_owned(Tensor::vector(out), Op::MeanRows(x), &[x]))
    }

    /// Row-wise dot products of two `[m×n]` matrices, giving `[m]`.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, n) = self.value(a).dims2()?;
        if self.shape(b) != [m, n] {
            return Err(Error::shape("row_dot", self.shape(a), self.shape(b)));
        }
        let (ta, tb) = (self.value(a), self.value(b));
        let out = (0..m).map(|i| dot(ta.row(i), tb.row(i))).collect();
        Ok(self.push_owned(Tensor::vector(out), Op::RowDot(a, b), &[a, b]))
    }

    /// Same-padded 1-D convolution over positions.
    ///
    /// `x: [T×d_in]`, `kernels: [d_out×w×d_in]`, `bias: [d_out]`, output `[T×d_out]`.
    /// The kernel is centred: tap `j` reads position `t + j - w/2`, out-of-range taps read zero.
    pub fn conv1d(&mut self, x: Var, kernels: Var, bias: Var) -> Result<Var> {
        let (t_len, d_in) = self.value(x).dims2()?;
        let (d_out, width, k_in) = match self.shape(kernels) {
            &[a, b, c] => (a, b, c),
            s => return Err(Error::shape("conv1d", s, &[0, 0, d_in])),
        };
        if k_in != d_in {
            return Err(Error::shape("conv1d", self.shape(x), self.shape(kernels)));
        }
        if width % 2 == 0 {
            return Err(Error::Config(format!(
                "convolution width must be odd for same padding, got {width}"
            )));
        }
        if self.shape(bias) != [d_out] {
            return Err(Error::shape("conv1d bias", self.shape(kernels), self.shape(bias)));
        }
        if t_len == 0 {
            return Err(Error::Contract("conv1d over an empty sequence".into()));
        }
        let half = width / 2;
        let wd = width * d_in;
        let src = self.value(x).data();
        let mut cols = vec![0.0; t_len * wd];
        for t in 0..t_len {
            for j in 0..width {
                let pos = t as isize + j as isize - half as isize;
                if pos < 0 || pos >= t_len as isize {
                    continue;
                }
                let pos = pos as usize;
                cols[t * wd + j * d_in..t * wd + (j + 1) * d_in]
                    .copy_from_slice(&src[pos * d_in..(pos + 1) * d_in]);
            }
        }
        let b = self.value(bias).data();
        let mut out = Vec::with_capacity(t_len * d_out);
        for _ in 0..t_len {
            out.extend_from_slice(b);
        }
        gemm_nt(&cols, self.value(kernels).data(), &mut out, t_len, wd, d_out);
        let t = Tensor::new(vec![t_len, d_out], out)?;
        let op = Op::Conv1d {
            kernels,
            bias,
            x,
            cols,
            width,
        };
        Ok(self.push_owned(t, op, &[x, kernels, bias]))
    }

    /// Row lookup into `table: [V×d]`. Ids equal to `skip` yield a zero row with no gradient.
    pub fn embedding(&mut self, table: Var, ids: &[usize], skip: Option<usize>) -> Result<Var> {
        let (rows, d) = self.value(table).dims2()?;
        if ids.is_empty() {
            return Err(Error::Contract("embedding lookup with no ids".into()));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= rows) {
            return Err(Error::Contract(format!(
                "id {bad} out of range for table with {rows} rows"
            )));
        }
        let tt = self.value(table);
        let mut out = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            if Some(i) == skip {
                out.extend(std::iter::repeat_n(0.0, d));
            } else {
                out.extend_from_slice(tt.row(i));
            }
        }
        let t = Tensor::new(vec![ids.len(), d], out)?;
        let op = Op::Embedding {
            table,
            ids: ids.to_vec(),
            skip,
        };
        Ok(self.push_owned(t, op, &[table]))
    }

    pub fn gather_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let (m, n) = self.value(x).dims2()?;
        if rows.is_empty() || rows.iter().any(|&r| r >= m) {
            return Err(Error::Contract(format!("invalid row selection from {m} rows")));
        }
        let tx = self.value(x);
        let mut out = Vec::with_capacity(rows.len() * n);
        for &r in rows {
            out.extend_from_slice(tx.row(r));
        }
        let t = Tensor::new(vec![rows.len(), n], out)?;
        Ok(self.push_owned(t, Op::GatherRows { x, rows: rows.to_vec() }, &[x]))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Contract("concat of nothing".into()))?;
        let (m, _) = self.value(first).dims2()?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pm, pn) = self.value(p).dims2()?;
            if pm != m {
                return Err(Error::shape("concat_cols", self.shape(first), self.shape(p)));
            }
            widths.push(pn);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * total);
        for i in 0..m {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(i));
            }
        }
        let t = Tensor::new(vec![m, total], out)?;
        Ok(self.push_owned(t, Op::ConcatCols(parts.to_vec()), parts))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let t = self.value(x).clone().reshaped(shape)?;
        Ok(self.push_owned(t, Op::Reshape(x), &[x]))
    }

    /// Mean binary cross-entropy; probabilities are clamped to `[ε, 1-ε]` first.
    pub fn bce(&mut self, probs: Var, targets: &[f64]) -> Result<Var> {
        let tp = self.value(probs);
        if tp.len() != targets.len() {
            return Err(Error::shape("bce", tp.shape(), &[targets.len()]));
        }
        let n = targets.len() as f64;
        let total: f64 = tp
            .data()
            .iter()
            .zip(targets)
            .map(|(&p, &y)| {
                let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
                -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
            })
            .sum();
        let op = Op::Bce {
            probs,
            targets: targets.to_vec(),
        };
        Ok(self.push_owned(Tensor::scalar(total / n), op, &[probs]))
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<GradientMap> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..=loss.0).map(|_| None).collect();
        let mut out = GradientMap::new();
        if !self.nodes[loss.0].needs_grad {
            return Ok(out);
        }
        grads[loss.0] = Some(Tensor::full(self.shape(loss), 1.0));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            self.propagate(node, g, &mut grads, &mut out)?;
        }
        Ok(out)
    }

    fn propagate(
        &self,
        node: &Node<'p>,
        g: Tensor,
        grads: &mut [Option<Tensor>],
        out: &mut GradientMap,
    ) -> Result<()> {
        let gd = g.data();
        match &node.op {
            Op::Constant => {}
            Op::Param(name) => out.accumulate(name, g),
            Op::MatMul(a, b) => {
                let (m, k) = self.value(*a).dims2()?;
                let n = self.value(*b).shape()[1];
                if self.requires_grad(*a) {
                    let mut da = vec![0.0; m * k];
                    gemm_nt(gd, self.value(*b).data(), &mut da, m, n, k);
                    self.accum(grads, *a, da);
                }
                if self.requires_grad(*b) {
                    let mut db = vec![0.0; k * n];
                    gemm_tn(self.value(*a).data(), gd, &mut db, m, k, n);
                    self.accum(grads, *b, db);
                }
            }
            Op::MatMulT(a, b) => {
                let (m, k) = self.value(*a).dims2()?;
                let n = self.value(*b).shape()[0];
                if self.requires_grad(*a) {
                    let mut da = vec![0.0; m * k];
                    gemm_nn(gd, self.value(*b).data(), &mut da, m, n, k);
                    self.accum(grads, *a, da);
                }
                if self.requires_grad(*b) {
                    let mut db = vec![0.0; n * k];
                    gemm_tn(gd, self.value(*a).data(), &mut db, m, n, k);
                    self.accum(grads, *b, db);
                }
            }
            Op::Add(a, b) => {
                if self.requires_grad(*a) {
                    self.accum(grads, *a, gd.to_vec());
                }
                if self.requires_grad(*b) {
                    self.accum(grads, *b, gd.to_vec());
                }
            }
            Op::AddRow(x, row) => {
                if self.requires_grad(*x) {
                    self.accum(grads, *x, gd.to_vec());
                }
                if self.requires_grad(*row) {
                    let n = self.value(*row).len();
                    let mut dr = vec![0.0; n];
                    for chunk in gd.chunks(n) {
                        for (d, v) in dr.iter_mut().zip(chunk) {
                            *d += v;
                        }
                    }
                    self.accum(grads, *row, dr);
                }
            }
            Op::Mul(a, b) => {
                if self.requires_grad(*a) {
                    let bv = self.value(*b).data();
                    self.accum(grads, *a, gd.iter().zip(bv).map(|(g, y)| g * y).collect());
                }
                if self.requires_grad(*b) {
                    let av = self.value(*a).data();
                    self.accum(grads, *b, gd.iter().zip(av).map(|(g, x)| g * x).collect());
                }
            }
            Op::Scale(x, c) => self.accum(grads, *x, gd.iter().map(|g| g * c).collect()),
            Op::Sigmoid(x) => {
                let y = node.value.data();
                let dx = gd.iter().zip(y).map(|(g, y)| g * y * (1.0 - y)).collect();
                self.accum(grads, *x, dx);
            }
            Op::Tanh(x) => {
                let y = node.value.data();
                let dx = gd.iter().zip(y).map(|(g, y)| g * (1.0 - y * y)).collect();
                self.accum(grads, *x, dx);
            }
            Op::Clamp { x, lo, hi } => {
                let xv = self.value(*x).data();
                let dx = gd
                    .iter()
                    .zip(xv)
                    .map(|(g, v)| if *v >= *lo && *v <= *hi { *g } else { 0.0 })
                    .collect();
                self.accum(grads, *x, dx);
            }
            Op::Softmax { x, axis } => {
                let y = node.value.data();
                let (outer, len, inner) = axis_split(node.value.shape(), *axis);
                let mut dx = vec![0.0; y.len()];
                for o in 0..outer {
                    for j in 0..inner {
                        let idx = |i: usize| (o * len + i) * inner + j;
                        let s: f64 = (0..len).map(|i| gd[idx(i)] * y[idx(i)]).sum();
                        for i in 0..len {
                            dx[idx(i)] = y[idx(i)] * (gd[idx(i)] - s);
                        }
                    }
                }
                self.accum(grads, *x, dx);
            }
            Op::Sum(x) => {
                let n = self.value(*x).len();
                self.accum(grads, *x, vec![gd[0]; n]);
            }
            Op::MeanRows(x) => {
                let (m, _) = self.value(*x).dims2()?;
                let scale = 1.0 / m as f64;
                let row: Vec<f64> = gd.iter().map(|g| g * scale).collect();
                self.accum(grads, *x, row.repeat(m));
            }
            Op::RowDot(a, b) => {
                let (m, n) = self.value(*a).dims2()?;
                for (target, other) in [(*a, *b), (*b, *a)] {
                    if !self.requires_grad(target) {
                        continue;
                    }
                    let ov = self.value(other);
                    let mut d = vec![0.0; m * n];
                    for i in 0..m {
                        for (dv, o) in d[i * n..(i + 1) * n].iter_mut().zip(ov.row(i)) {
                            *dv = gd[i] * o;
                        }
                    }
                    self.accum(grads, target, d);
                }
            }
            Op::Conv1d {
                kernels,
                bias,
                x,
                cols,
                width,
            } => {
                let (t_len, d_out) = node.value.dims2()?;
                let d_in = self.value(*x).shape()[1];
                let wd = width * d_in;
                if self.requires_grad(*kernels) {
                    let mut dk = vec![0.0; d_out * wd];
                    gemm_tn(gd, cols, &mut dk, t_len, d_out, wd);
                    self.accum(grads, *kernels, dk);
                }
                if self.requires_grad(*bias) {
                    let mut db = vec![0.0; d_out];
                    for row in gd.chunks(d_out) {
                        for (d, v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    self.accum(grads, *bias, db);
                }
                if self.requires_grad(*x) {
                    let mut dcols = vec![0.0; t_len * wd];
                    gemm_nn(gd, self.value(*kernels).data(), &mut dcols, t_len, d_out, wd);
                    let half = width / 2;
                    let mut dx = vec![0.0; t_len * d_in];
                    for t in 0..t_len {
                        for j in 0..*width {
                            let pos = t as isize + j as isize - half as isize;
                            if pos < 0 || pos >= t_len as isize {
                                continue;
                            }
                            let pos = pos as usize;
                            let src = &dcols[t * wd + j * d_in..t * wd + (j + 1) * d_in];
                            for (d, v) in dx[pos * d_in..(pos + 1) * d_in].iter_mut().zip(src) {
                                *d += v;
                            }
                        }
                    }
                    self.accum(grads, *x, dx);
                }
            }
            Op::Embedding { table, ids, skip } => {
                let (rows, d) = self.value(*table).dims2()?;
                let mut dt = vec![0.0; rows * d];
                for (k, &i) in ids.iter().enumerate() {
                    if Some(i) == *skip {
                        continue;
                    }
                    for (dv, v) in dt[i * d..(i + 1) * d].iter_mut().zip(&gd[k * d..(k + 1) * d]) {
                        *dv += v;
                    }
                }
                self.accum(grads, *table, dt);
            }
            Op::GatherRows { x, rows } => {
                let (m, n) = self.value(*x).dims2()?;
                let mut dx = vec![0.0; m * n];
                for (k, &r) in rows.iter().enumerate() {
                    for (dv, v) in dx[r * n..(r + 1) * n].iter_mut().zip(&gd[k * n..(k + 1) * n]) {
                        *dv += v;
                    }
                }
                self.accum(grads, *x, dx);
            }
            Op::ConcatCols(parts) => {
                let (m, total) = node.value.dims2()?;
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).shape()[1];
                    if self.requires_grad(p) {
                        let mut dp = Vec::with_capacity(m * n);
                        for i in 0..m {
                            dp.extend_from_slice(&gd[i * total + offset..i * total + offset + n]);
                        }
                        self.accum(grads, p, dp);
                    }
                    offset += n;
                }
            }
            Op::Reshape(x) => self.accum(grads, *x, gd.to_vec()),
            Op::Bce { probs, targets } => {
                let pv = self.value(*probs).data();
                let n = targets.len() as f64;
                let dx = pv
                    .iter()
                    .zip(targets)
                    .map(|(&p, &y)| {
                        if !(PROB_EPS..=1.0 - PROB_EPS).contains(&p) {
                            0.0
                        } else {
                            gd[0] * (p - y) / (p * (1.0 - p)) / n
                        }
                    })
                    .collect();
                self.accum(grads, *probs, dx);
            }
        }
        Ok(())
    }

    fn accum(&self, grads: &mut [Option<Tensor>], target: Var, data: Vec<f64>) {
        if !self.requires_grad(target) {
            return;
        }
        let slot = &mut grads[target.0];
        match slot {
            Some(existing) => {
                for (e, d) in existing.data_mut().iter_mut().zip(&data) {
                    *e += d;
                }
            }
            None => {
                let shape = self.shape(target).to_vec();
                *slot = Some(Tensor::new(shape, data).expect("gradient shape"));
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}
