//! Matrix-valued reverse-mode automatic differentiation.
//!
//! Every operation appends a node to a [`Tape`]; nodes are stored in creation
//! order, which is a topological order of the graph. [`Tape::backward`] walks
//! the nodes once in reverse and accumulates adjoints.

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

const LAYER_NORM_EPS: f64 = 1e-5;

enum Op {
    Leaf,
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    /// `a + b` with `b` a single row broadcast over the rows of `a`.
    AddRow(Var, Var),
    MulRow(Var, Var),
    /// Elementwise product with a constant mask (dropout).
    MulConst(Var, Matrix),
    /// Row standardization; caches normalized output and 1/std per row.
    LayerNorm(Var, Vec<f64>),
    SoftmaxRows(Var),
    Gelu(Var),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SelectRows(Var, Vec<usize>),
    /// Unit-norm rows; caches the row norms.
    NormalizeRows(Var, Vec<f64>),
    Exp(Var),
    Log(Var),
    Sum(Var),
    /// Row-wise `log Σ exp` over masked entries; caches the masked softmax.
    MaskedLogSumExp(Var, Matrix),
    Pick(Var, usize, usize),
}

struct Node {
    value: Matrix,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient with respect to `var`; zeros when the loss does not depend
    /// on it.
    pub fn get(&self, var: Var) -> Matrix {
        match &self.grads[var.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[var.0];
                Matrix::zeros(r, c)
            }
        }
    }

    pub fn take(&mut self, var: Var) -> Matrix {
        match self.grads[var.0].take() {
            Some(g) => g,
            None => {
                let (r, c) = self.shapes[var.0];
                Matrix::zeros(r, c)
            }
        }
    }
}

fn shape_err(expected: (usize, usize), found: (usize, usize)) -> Error {
    Error::ShapeMismatch { expected, found }
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

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    /// Input node. Parameters and constants are both leaves; constants simply
    /// have their gradient ignored.
    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.cols() != vb.rows() {
            return Err(shape_err((va.cols(), vb.cols()), vb.shape()));
        }
        let out = va.matmul(vb);
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.cols() != vb.cols() {
            return Err(shape_err((vb.rows(), va.cols()), vb.shape()));
        }
        let out = va.matmul_t(vb);
        Ok(self.push(out, Op::MatMulT(a, b)))
    }

    fn same_shape(&self, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y);
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y);
        Ok(self.push(out, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y);
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let out = self.value(a).scale(factor);
        self.push(out, Op::Scale(a, factor))
    }

    fn row_broadcast(&self, a: Var, row: Var) -> Result<()> {
        let (ra, ca) = self.shape(a);
        let _ = ra;
        if self.shape(row) != (1, ca) {
            return Err(shape_err((1, ca), self.shape(row)));
        }
        Ok(())
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        self.row_broadcast(a, row)?;
        let r = self.value(row).as_slice().to_vec();
        let va = self.value(a);
        let out = Matrix::from_fn(va.rows(), va.cols(), |i, j| va[(i, j)] + r[j]);
        Ok(self.push(out, Op::AddRow(a, row)))
    }

    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        self.row_broadcast(a, row)?;
        let r = self.value(row).as_slice().to_vec();
        let va = self.value(a);
        let out = Matrix::from_fn(va.rows(), va.cols(), |i, j| va[(i, j)] * r[j]);
        Ok(self.push(out, Op::MulRow(a, row)))
    }

    /// Elementwise product with a constant (e.g. an inverted-dropout mask).
    pub fn mul_const(&mut self, a: Var, mask: Matrix) -> Result<Var> {
        if self.shape(a) != mask.shape() {
            return Err(shape_err(self.shape(a), mask.shape()));
        }
        let out = self.value(a).zip_map(&mask, |x, m| x * m);
        Ok(self.push(out, Op::MulConst(a, mask)))
    }

    /// Per-row standardization without affine parameters.
    pub fn layer_norm(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let (r, c) = va.shape();
        let mut out = Matrix::zeros(r, c);
        let mut inv_std = Vec::with_capacity(r);
        for i in 0..r {
            let row = va.row(i);
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / c as f64;
            let s = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            for (o, &x) in out.row_mut(i).iter_mut().zip(row) {
                *o = (x - mean) * s;
            }
            inv_std.push(s);
        }
        self.push(out, Op::LayerNorm(a, inv_std))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let out = softmax_rows(self.value(a));
        self.push(out, Op::SoftmaxRows(a))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| gelu(x).0);
        self.push(out, Op::Gelu(a))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let va = self.value(a);
        if start + len > va.cols() {
            return Err(Error::InvalidArgument(format!(
                "column slice {start}..{} of {} columns",
                start + len,
                va.cols()
            )));
        }
        let out = Matrix::from_fn(va.rows(), len, |i, j| va[(i, start + j)]);
        Ok(self.push(out, Op::SliceCols(a, start)))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.shape(parts[0]).0;
        let mut cols = 0;
        for &p in parts {
            if self.shape(p).0 != rows {
                return Err(shape_err((rows, self.shape(p).1), self.shape(p)));
            }
            cols += self.shape(p).1;
        }
        let mut out = Matrix::zeros(rows, cols);
        let mut off = 0;
        for &p in parts {
            let v = self.value(p);
            for i in 0..rows {
                out.row_mut(i)[off..off + v.cols()].copy_from_slice(v.row(i));
            }
            off += v.cols();
        }
        Ok(self.push(out, Op::ConcatCols(parts.to_vec())))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = self.shape(parts[0]).1;
        if let Some(&bad) = parts.iter().find(|&&p| self.shape(p).1 != cols) {
            return Err(shape_err((self.shape(bad).0, cols), self.shape(bad)));
        }
        let vals: Vec<&Matrix> = parts.iter().map(|&p| self.value(p)).collect();
        let out = Matrix::vstack(&vals);
        Ok(self.push(out, Op::ConcatRows(parts.to_vec())))
    }

    pub fn select_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var> {
        let n = self.shape(a).0;
        if let Some(&bad) = rows.iter().find(|&&r| r >= n) {
            return Err(Error::InvalidArgument(format!("row {bad} of {n}")));
        }
        let out = self.value(a).select_rows(rows);
        Ok(self.push(out, Op::SelectRows(a, rows.to_vec())))
    }

    /// Rows scaled to unit norm; zero rows are an error.
    pub fn normalize_rows(&mut self, a: Var) -> Result<Var> {
        let va = self.value(a);
        let mut norms = Vec::with_capacity(va.rows());
        let mut out = va.clone();
        for i in 0..va.rows() {
            let n = crate::matrix::norm(va.row(i));
            if n == 0.0 || !n.is_finite() {
                return Err(Error::ZeroNorm { row: i });
            }
            out.row_mut(i).iter_mut().for_each(|x| *x /= n);
            norms.push(n);
        }
        Ok(self.push(out, Op::NormalizeRows(a, norms)))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::exp);
        self.push(out, Op::Exp(a))
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::ln);
        self.push(out, Op::Log(a))
    }

    /// Sum of all entries as a 1×1 node.
    pub fn sum(&mut self, a: Var) -> Var {
        let out = Matrix::scalar(self.value(a).sum());
        self.push(out, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Row-wise `log Σ_{mask} exp(a)`, an `r×1` node. Every row needs at
    /// least one selected entry.
    pub fn masked_logsumexp(&mut self, a: Var, mask: &[bool]) -> Result<Var> {
        let va = self.value(a);
        let (r, c) = va.shape();
        if mask.len() != r * c {
            return Err(Error::InvalidArgument(format!(
                "mask of {} entries for {r}x{c}",
                mask.len()
            )));
        }
        let mut out = Matrix::zeros(r, 1);
        let mut weights = Matrix::zeros(r, c);
        for i in 0..r {
            let row = va.row(i);
            let m = &mask[i * c..(i + 1) * c];
            let max = row
                .iter()
                .zip(m)
                .filter(|(_, &k)| k)
                .map(|(&x, _)| x)
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                return Err(Error::InvalidArgument(format!("row {i} has an empty mask")));
            }
            let mut total = 0.0;
            for j in 0..c {
                if m[j] {
                    let e = (row[j] - max).exp();
                    weights[(i, j)] = e;
                    total += e;
                }
            }
            weights.row_mut(i).iter_mut().for_each(|w| *w /= total);
            out[(i, 0)] = max + total.ln();
        }
        Ok(self.push(out, Op::MaskedLogSumExp(a, weights)))
    }

    /// Single entry as a 1×1 node.
    pub fn pick(&mut self, a: Var, i: usize, j: usize) -> Result<Var> {
        let (r, c) = self.shape(a);
        if i >= r || j >= c {
            return Err(Error::InvalidArgument(format!("entry ({i}, {j}) of {r}x{c}")));
        }
        let out = Matrix::scalar(self.value(a)[(i, j)]);
        Ok(self.push(out, Op::Pick(a, i, j)))
    }

    /// Cosine similarity between all rows of `a` and all rows of `b`.
    pub fn cosine(&mut self, a: Var, b: Var) -> Result<Var> {
        let an = self.normalize_rows(a)?;
        let bn = if a == b { an } else { self.normalize_rows(b)? };
        self.matmul_t(an, bn)
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if loss.0 >= self.nodes.len() {
            return Err(Error::InvalidArgument(format!(
                "node {} is not on this tape",
                loss.0
            )));
        }
        if self.shape(loss) != (1, 1) {
            return Err(Error::InvalidArgument(format!(
                "loss must be scalar, got {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Matrix>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(self.nodes.len(), || None);
        grads[loss.0] = Some(Matrix::scalar(1.0));
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape()).collect(),
        })
    }

    fn propagate(&self, idx: usize, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let node = &self.nodes[idx];
        let mut acc = |v: Var, d: Matrix| match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&d),
            slot @ None => *slot = Some(d),
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                acc(*a, g.matmul_t(self.value(*b)));
                acc(*b, self.value(*a).t_matmul(g));
            }
            Op::MatMulT(a, b) => {
                // out = A Bᵀ: dA = G B, dB = Gᵀ A
                acc(*a, g.matmul(self.value(*b)));
                acc(*b, g.t_matmul(self.value(*a)));
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.scale(-1.0));
            }
            Op::Mul(a, b) => {
                acc(*a, g.zip_map(self.value(*b), |x, y| x * y));
                acc(*b, g.zip_map(self.value(*a), |x, y| x * y));
            }
            Op::Scale(a, f) => acc(*a, g.scale(*f)),
            Op::AddRow(a, row) => {
                acc(*a, g.clone());
                acc(*row, column_sums(g));
            }
            Op::MulRow(a, row) => {
                let r = self.value(*row).as_slice();
                acc(
                    *a,
                    Matrix::from_fn(g.rows(), g.cols(), |i, j| g[(i, j)] * r[j]),
                );
                let prod = g.zip_map(self.value(*a), |x, y| x * y);
                acc(*row, column_sums(&prod));
            }
            Op::MulConst(a, mask) => acc(*a, g.zip_map(mask, |x, m| x * m)),
            Op::LayerNorm(a, inv_std) => {
                let y = &node.value;
                let (r, c) = y.shape();
                let mut d = Matrix::zeros(r, c);
                for i in 0..r {
                    let gy = g.row(i);
                    let yy = y.row(i);
                    let mean_g = gy.iter().sum::<f64>() / c as f64;
                    let mean_gy = gy.iter().zip(yy).map(|(a, b)| a * b).sum::<f64>() / c as f64;
                    for (j, o) in d.row_mut(i).iter_mut().enumerate() {
                        *o = inv_std[i] * (gy[j] - mean_g - yy[j] * mean_gy);
                    }
                }
                acc(*a, d);
            }
            Op::SoftmaxRows(a) => {
                let y = &node.value;
                let mut d = Matrix::zeros(y.rows(), y.cols());
                for i in 0..y.rows() {
                    let dot: f64 = g.row(i).iter().zip(y.row(i)).map(|(a, b)| a * b).sum();
                    for (j, o) in d.row_mut(i).iter_mut().enumerate() {
                        *o = y[(i, j)] * (g[(i, j)] - dot);
                    }
                }
                acc(*a, d);
            }
            Op::Gelu(a) => {
                acc(*a, self.value(*a).zip_map(g, |x, gg| gelu(x).1 * gg));
            }
            Op::SliceCols(a, start) => {
                let (r, c) = self.shape(*a);
                let mut d = Matrix::zeros(r, c);
                for i in 0..r {
                    d.row_mut(i)[*start..*start + g.cols()].copy_from_slice(g.row(i));
                }
                acc(*a, d);
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let (r, c) = self.shape(p);
                    acc(p, Matrix::from_fn(r, c, |i, j| g[(i, off + j)]));
                    off += c;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let (r, _) = self.shape(p);
                    let rows: Vec<usize> = (off..off + r).collect();
                    acc(p, g.select_rows(&rows));
                    off += r;
                }
            }
            Op::SelectRows(a, rows) => {
                let (r, c) = self.shape(*a);
                let mut d = Matrix::zeros(r, c);
                for (k, &src) in rows.iter().enumerate() {
                    for (o, &x) in d.row_mut(src).iter_mut().zip(g.row(k)) {
                        *o += x;
                    }
                }
                acc(*a, d);
            }
            Op::NormalizeRows(a, norms) => {
                let y = &node.value;
                let mut d = Matrix::zeros(y.rows(), y.cols());
                for i in 0..y.rows() {
                    let dot: f64 = g.row(i).iter().zip(y.row(i)).map(|(a, b)| a * b).sum();
                    for (j, o) in d.row_mut(i).iter_mut().enumerate() {
                        *o = (g[(i, j)] - y[(i, j)] * dot) / norms[i];
                    }
                }
                acc(*a, d);
            }
            Op::Exp(a) => acc(*a, g.zip_map(&node.value, |x, y| x * y)),
            Op::Log(a) => acc(*a, g.zip_map(self.value(*a), |x, y| x / y)),
            Op::Sum(a) => {
                let (r, c) = self.shape(*a);
                acc(*a, Matrix::filled(r, c, g[(0, 0)]));
            }
            Op::MaskedLogSumExp(a, weights) => {
                acc(
                    *a,
                    Matrix::from_fn(weights.rows(), weights.cols(), |i, j| {
                        g[(i, 0)] * weights[(i, j)]
                    }),
                );
            }
            Op::Pick(a, i, j) => {
                let (r, c) = self.shape(*a);
                let mut d = Matrix::zeros(r, c);
                d[(*i, *j)] = g[(0, 0)];
                acc(*a, d);
            }
        }
    }
}

fn column_sums(g: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(1, g.cols());
    for row in g.iter_rows() {
        for (o, &x) in out.as_mut_slice().iter_mut().zip(row) {
            *o += x;
        }
    }
    out
}

pub(crate) fn softmax_rows(a: &Matrix) -> Matrix {
    let mut out = a.clone();
    for i in 0..a.rows() {
        let row = out.row_mut(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for x in row.iter_mut() {
            *x = (*x - max).exp();
            total += *x;
        }
        row.iter_mut().for_each(|x| *x /= total);
    }
    out
}

/// Value and derivative of the tanh-approximated GELU.
fn gelu(x: f64) -> (f64, f64) {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    const A: f64 = 0.044_715;
    let inner = C * (x + A * x * x * x);
    let t = inner.tanh();
    let value = 0.5 * x * (1.0 + t);
    let deriv = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * C * (1.0 + 3.0 * A * x * x);
    (value, deriv)
}
