//! Tape-based reverse-mode differentiation over [`Mat`] values.
//!
//! Nodes are appended in evaluation order, so the node list is already a
//! topological order and `backward` walks it in exact reverse.

use super::{gemm, Mat, ParamStore};
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Constant,
    Param(String),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// `a` is `B x n`, `row` is `1 x n`.
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Max(Var, Var),
    Min(Var, Var),
    MaxScalar(Var, f64),
    Clamp(Var, f64, f64),
    Sum(Var),
    Mean(Var),
    /// `B x n -> B x 1`.
    SumCols(Var),
    /// `B x n -> 1 x n`.
    SumRows(Var),
    Concat(Vec<Var>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
}

#[derive(Clone, Debug)]
struct Node {
    value: Mat,
    op: Op,
    requires_grad: bool,
}

/// A computation graph recorded during a forward pass.
#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn shape_err(op: &str, a: (usize, usize), b: (usize, usize)) -> Error {
    Error::config(format!("shape mismatch in {op}: {a:?} vs {b:?}"))
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

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Mat, op: Op, requires_grad: bool) -> Var {
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

    /// Data input; never receives a gradient.
    pub fn constant(&mut self, value: Mat) -> Var {
        self.push(value, Op::Constant, false)
    }

    /// Binds a named parameter. Binding the same name twice yields two nodes whose
    /// gradients are summed into the same entry.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        let value = store.require(name)?.clone();
        Ok(self.push(value, Op::Param(name.to_string()), true))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.1 != sb.0 {
            return Err(shape_err("matmul", sa, sb));
        }
        let value = self.value(a).matmul(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    fn same_shape(&self, op: &str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(shape_err(op, sa, sb));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    fn row_broadcast(&self, op: &str, a: Var, row: Var) -> Result<()> {
        let (sa, sr) = (self.shape(a), self.shape(row));
        if sr.0 != 1 || sr.1 != sa.1 {
            return Err(shape_err(op, sa, sr));
        }
        Ok(())
    }

    /// Adds a `1 x n` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        self.row_broadcast("add_row", a, row)?;
        let mut value = self.value(a).clone();
        let r = &self.value(row).data;
        for chunk in value.data.chunks_mut(r.len().max(1)) {
            for (x, y) in chunk.iter_mut().zip(r) {
                *x += y;
            }
        }
        let rg = self.rg(a) || self.rg(row);
        Ok(self.push(value, Op::AddRow(a, row), rg))
    }

    /// Multiplies every row of `a` elementwise by a `1 x n` row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        self.row_broadcast("mul_row", a, row)?;
        let mut value = self.value(a).clone();
        let r = &self.value(row).data;
        for chunk in value.data.chunks_mut(r.len().max(1)) {
            for (x, y) in chunk.iter_mut().zip(r) {
                *x *= y;
            }
        }
        let rg = self.rg(a) || self.rg(row);
        Ok(self.push(value, Op::MulRow(a, row), rg))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).map(|x| x * s);
        let rg = self.rg(a);
        self.push(value, Op::Scale(a, s), rg)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).map(|x| x + s);
        let rg = self.rg(a);
        self.push(value, Op::AddScalar(a), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::tanh);
        let rg = self.rg(a);
        self.push(value, Op::Tanh(a), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(sigmoid);
        let rg = self.rg(a);
        self.push(value, Op::Sigmoid(a), rg)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::exp);
        let rg = self.rg(a);
        self.push(value, Op::Exp(a), rg)
    }

    pub fn log(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::ln);
        let rg = self.rg(a);
        self.push(value, Op::Log(a), rg)
    }

    /// Elementwise maximum; ties route the gradient to `a`.
    pub fn max(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("max", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| if x >= y { x } else { y });
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Max(a, b), rg))
    }

    /// Elementwise minimum; ties route the gradient to `a`.
    pub fn min(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("min", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| if x <= y { x } else { y });
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Min(a, b), rg))
    }

    /// `max(a, c)` elementwise. The gradient passes where `a > c`.
    pub fn max_scalar(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).map(|x| x.max(c));
        let rg = self.rg(a);
        self.push(value, Op::MaxScalar(a, c), rg)
    }

    /// Clamp to `[lo, hi]`; the gradient passes where `lo <= a <= hi`.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let value = self.value(a).map(|x| x.clamp(lo, hi));
        let rg = self.rg(a);
        self.push(value, Op::Clamp(a, lo, hi), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Mat::scalar(self.value(a).sum());
        let rg = self.rg(a);
        self.push(value, Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len().max(1) as f64;
        let value = Mat::scalar(self.value(a).sum() / n);
        let rg = self.rg(a);
        self.push(value, Op::Mean(a), rg)
    }

    pub fn sum_cols(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let mut value = Mat::zeros(m.rows, 1);
        for r in 0..m.rows {
            value.data[r] = m.row_slice(r).iter().sum();
        }
        let rg = self.rg(a);
        self.push(value, Op::SumCols(a), rg)
    }

    pub fn sum_rows(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let mut value = Mat::zeros(1, m.cols);
        for r in 0..m.rows {
            for (acc, x) in value.data.iter_mut().zip(m.row_slice(r)) {
                *acc += x;
            }
        }
        let rg = self.rg(a);
        self.push(value, Op::SumRows(a), rg)
    }

    /// Column-wise concatenation; all parts share the row count.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::config("concat of zero parts"));
        };
        let rows = self.shape(first).0;
        let mut cols = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.0 != rows {
                return Err(shape_err("concat", (rows, cols), s));
            }
            cols += s.1;
        }
        let mut value = Mat::zeros(rows, cols);
        for r in 0..rows {
            let mut off = 0;
            for &p in parts {
                let src = self.value(p).row_slice(r);
                value.data[r * cols + off..r * cols + off + src.len()].copy_from_slice(src);
                off += src.len();
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(value, Op::Concat(parts.to_vec()), rg))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (rows, cols) = self.shape(a);
        if start + len > cols {
            return Err(shape_err("slice_cols", (rows, cols), (start, len)));
        }
        let src = self.value(a);
        let mut value = Mat::zeros(rows, len);
        for r in 0..rows {
            value.data[r * len..(r + 1) * len]
                .copy_from_slice(&src.data[r * cols + start..r * cols + start + len]);
        }
        let rg = self.rg(a);
        Ok(self.push(value, Op::SliceCols(a, start), rg))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (rows, cols) = self.shape(a);
        if start + len > rows {
            return Err(shape_err("slice_rows", (rows, cols), (start, len)));
        }
        let value = Mat::from_vec(
            len,
            cols,
            self.value(a).data[start * cols..(start + len) * cols].to_vec(),
        );
        let rg = self.rg(a);
        Ok(self.push(value, Op::SliceRows(a, start), rg))
    }

    /// Reverse pass from a scalar `seed`. Returns one gradient per entry of `store`;
    /// parameters not reachable from `seed` get zeros.
    pub fn backward(&self, seed: Var, store: &ParamStore) -> Result<ParamStore> {
        if self.shape(seed) != (1, 1) {
            return Err(Error::usage(format!(
                "backward seed must be 1x1, got {:?}",
                self.shape(seed)
            )));
        }
        let mut out = store.zeros_like();
        let mut grads: Vec<Option<Mat>> = vec![None; seed.0 + 1];
        grads[seed.0] = Some(Mat::scalar(1.0));

        for i in (0..=seed.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            match &node.op {
                Op::Constant => {}
                Op::Param(name) => {
                    let slot = out.get_mut_unversioned(name).ok_or_else(|| {
                        Error::config(format!("parameter `{name}` not in target store"))
                    })?;
                    if slot.shape() != g.shape() {
                        return Err(shape_err("param grad", slot.shape(), g.shape()));
                    }
                    slot.add_assign(&g);
                }
                Op::MatMul(a, b) => {
                    if self.rg(*a) {
                        let bv = self.value(*b);
                        let mut da = Mat::zeros(g.rows, bv.rows);
                        gemm(&g, false, bv, true, &mut da, 0.0);
                        self.acc(&mut grads, *a, da);
                    }
                    if self.rg(*b) {
                        let av = self.value(*a);
                        let mut db = Mat::zeros(av.cols, g.cols);
                        gemm(av, true, &g, false, &mut db, 0.0);
                        self.acc(&mut grads, *b, db);
                    }
                }
                Op::Add(a, b) => {
                    if self.rg(*b) {
                        self.acc(&mut grads, *b, g.clone());
                    }
                    self.acc(&mut grads, *a, g);
                }
                Op::Sub(a, b) => {
                    if self.rg(*b) {
                        self.acc(&mut grads, *b, g.map(|x| -x));
                    }
                    self.acc(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    if self.rg(*a) {
                        let da = g.zip_map(self.value(*b), |x, y| x * y);
                        self.acc(&mut grads, *a, da);
                    }
                    if self.rg(*b) {
                        let db = g.zip_map(self.value(*a), |x, y| x * y);
                        self.acc(&mut grads, *b, db);
                    }
                }
                Op::AddRow(a, row) => {
                    if self.rg(*row) {
                        self.acc(&mut grads, *row, column_sums(&g));
                    }
                    self.acc(&mut grads, *a, g);
                }
                Op::MulRow(a, row) => {
                    let rv = self.value(*row);
                    if self.rg(*row) {
                        let prod = g.zip_map(self.value(*a), |x, y| x * y);
                        self.acc(&mut grads, *row, column_sums(&prod));
                    }
                    if self.rg(*a) {
                        let mut da = g;
                        for chunk in da.data.chunks_mut(rv.cols.max(1)) {
                            for (x, y) in chunk.iter_mut().zip(&rv.data) {
                                *x *= y;
                            }
                        }
                        self.acc(&mut grads, *a, da);
                    }
                }
                Op::Scale(a, s) => {
                    let s = *s;
                    self.acc(&mut grads, *a, g.map(|x| x * s));
                }
                Op::AddScalar(a) => self.acc(&mut grads, *a, g),
                Op::Tanh(a) => {
                    let da = g.zip_map(&node.value, |x, y| x * (1.0 - y * y));
                    self.acc(&mut grads, *a, da);
                }
                Op::Sigmoid(a) => {
                    let da = g.zip_map(&node.value, |x, y| x * y * (1.0 - y));
                    self.acc(&mut grads, *a, da);
                }
                Op::Exp(a) => {
                    let da = g.zip_map(&node.value, |x, y| x * y);
                    self.acc(&mut grads, *a, da);
                }
                Op::Log(a) => {
                    let da = g.zip_map(self.value(*a), |x, y| x / y);
                    self.acc(&mut grads, *a, da);
                }
                Op::Max(a, b) | Op::Min(a, b) => {
                    let is_max = matches!(node.op, Op::Max(..));
                    let av = self.value(*a);
                    let bv = self.value(*b);
                    let pick_a: Vec<bool> = av
                        .data
                        .iter()
                        .zip(&bv.data)
                        .map(|(x, y)| if is_max { x >= y } else { x <= y })
                        .collect();
                    if self.rg(*a) {
                        self.acc_masked(&mut grads, *a, &g, |k| pick_a[k]);
                    }
                    if self.rg(*b) {
                        self.acc_masked(&mut grads, *b, &g, |k| !pick_a[k]);
                    }
                }
                Op::MaxScalar(a, c) => {
                    let av = self.value(*a);
                    self.acc_masked(&mut grads, *a, &g, |k| av.data[k] > *c);
                }
                Op::Clamp(a, lo, hi) => {
                    let av = self.value(*a);
                    self.acc_masked(&mut grads, *a, &g, |k| av.data[k] >= *lo && av.data[k] <= *hi);
                }
                Op::Sum(a) => {
                    let (r, c) = self.shape(*a);
                    self.acc(&mut grads, *a, Mat::filled(r, c, g.item()));
                }
                Op::Mean(a) => {
                    let (r, c) = self.shape(*a);
                    let n = (r * c).max(1) as f64;
                    self.acc(&mut grads, *a, Mat::filled(r, c, g.item() / n));
                }
                Op::SumCols(a) => {
                    let (r, c) = self.shape(*a);
                    let mut da = Mat::zeros(r, c);
                    for i in 0..r {
                        da.data[i * c..(i + 1) * c].fill(g.data[i]);
                    }
                    self.acc(&mut grads, *a, da);
                }
                Op::SumRows(a) => {
                    let (r, c) = self.shape(*a);
                    let mut da = Mat::zeros(r, c);
                    for chunk in da.data.chunks_mut(c.max(1)) {
                        chunk.copy_from_slice(&g.data);
                    }
                    self.acc(&mut grads, *a, da);
                }
                Op::Concat(parts) => {
                    let cols = g.cols;
                    let mut off = 0;
                    for &p in parts {
                        let (r, c) = self.shape(p);
                        if self.rg(p) {
                            let mut dp = Mat::zeros(r, c);
                            for i in 0..r {
                                dp.data[i * c..(i + 1) * c]
                                    .copy_from_slice(&g.data[i * cols + off..i * cols + off + c]);
                            }
                            self.acc(&mut grads, p, dp);
                        }
                        off += c;
                    }
                }
                Op::SliceCols(a, start) => {
                    let (r, c) = self.shape(*a);
                    let len = g.cols;
                    let mut da = Mat::zeros(r, c);
                    for i in 0..r {
                        da.data[i * c + start..i * c + start + len]
                            .copy_from_slice(&g.data[i * len..(i + 1) * len]);
                    }
                    self.acc(&mut grads, *a, da);
                }
                Op::SliceRows(a, start) => {
                    let (r, c) = self.shape(*a);
                    let mut da = Mat::zeros(r, c);
                    da.data[start * c..start * c + g.len()].copy_from_slice(&g.data);
                    self.acc(&mut grads, *a, da);
                }
            }
        }
        Ok(out)
    }

    fn acc(&self, grads: &mut [Option<Mat>], v: Var, g: Mat) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    /// Accumulates `g` where `keep(k)` holds. A fully masked gradient is dropped
    /// entirely, so inactive hinges leave upstream gradients bit-untouched.
    fn acc_masked(&self, grads: &mut [Option<Mat>], v: Var, g: &Mat, keep: impl Fn(usize) -> bool) {
        let mut any = false;
        let data: Vec<f64> = g
            .data
            .iter()
            .enumerate()
            .map(|(k, &x)| {
                if keep(k) {
                    any = true;
                    x
                } else {
                    0.0
                }
            })
            .collect();
        if any {
            self.acc(grads, v, Mat::from_vec(g.rows, g.cols, data));
        }
    }
}

fn column_sums(g: &Mat) -> Mat {
    let mut out = Mat::zeros(1, g.cols);
    for r in 0..g.rows {
        for (acc, x) in out.data.iter_mut().zip(g.row_slice(r)) {
            *acc += x;
        }
    }
    out
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
