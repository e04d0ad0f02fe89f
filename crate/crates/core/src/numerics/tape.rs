//! Tape-based reverse-mode differentiation over [`Matrix`] values.
//!
//! Values are recorded in evaluation order; [`Tape::backward`] walks the
//! record backwards and accumulates adjoints. Leaves registered with
//! [`Tape::param`] get a gradient in the result; leaves registered with
//! [`Tape::constant`] never do, and nothing downstream of constants alone is
//! differentiated.

use std::borrow::Cow;

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulT(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Square(Var),
    Relu(Var),
    /// Euclidean norm of each row, as a column.
    RowNorm(Var),
    Sum(Var),
    Mean(Var),
    SoftmaxRows(Var),
    GatherRows(Var, Vec<usize>),
    ConcatRows(Vec<Var>),
    /// `a + b` with `b` a single row broadcast down `a`.
    AddRow(Var, Var),
    /// `a ∘ b` with `b` a single row broadcast down `a`.
    MulRow(Var, Var),
    MeanRows(Var),
    /// Per-row `(x − mean) / sqrt(var + eps)`.
    Standardize(Var, f64),
    /// Mean softmax cross-entropy of logits rows against class labels.
    CrossEntropy(Var, Vec<usize>),
}

struct Node<'a> {
    value: Cow<'a, Matrix>,
    op: Op,
    needs_grad: bool,
}

/// Gradients returned by [`Tape::backward`], one per registered parameter in
/// registration order.
#[derive(Debug, Clone)]
pub struct Gradients {
    params: Vec<Var>,
    grads: Vec<Matrix>,
    visited: Vec<usize>,
}

impl Gradients {
    pub fn get(&self, param: Var) -> Option<&Matrix> {
        self.params
            .iter()
            .position(|&p| p == param)
            .map(|i| &self.grads[i])
    }

    pub fn into_vec(self) -> Vec<Matrix> {
        self.grads
    }

    pub fn as_slice(&self) -> &[Matrix] {
        &self.grads
    }

    /// Indices of the non-leaf operations in the order the backward pass
    /// processed them.
    pub fn visit_order(&self) -> &[usize] {
        &self.visited
    }
}

#[derive(Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
    params: Vec<Var>,
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    /// Value of a `1×1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v).get(0, 0)
    }

    fn push(&mut self, value: Cow<'a, Matrix>, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Registers a differentiable parameter block (borrowed, not copied).
    pub fn param(&mut self, m: &'a Matrix) -> Var {
        let v = self.push(Cow::Borrowed(m), Op::Leaf, true);
        self.params.push(v);
        v
    }

    pub fn constant(&mut self, m: &'a Matrix) -> Var {
        self.push(Cow::Borrowed(m), Op::Leaf, false)
    }

    pub fn constant_owned(&mut self, m: Matrix) -> Var {
        self.push(Cow::Owned(m), Op::Leaf, false)
    }

    fn unary(&mut self, a: Var, value: Matrix, op: Op) -> Var {
        let ng = self.needs(a);
        self.push(Cow::Owned(value), op, ng)
    }

    fn binary(&mut self, a: Var, b: Var, value: Matrix, op: Op) -> Var {
        let ng = self.needs(a) || self.needs(b);
        self.push(Cow::Owned(value), op, ng)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.binary(a, b, v, Op::MatMul(a, b)))
    }

    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul_t(self.value(b))?;
        Ok(self.binary(a, b, v, Op::MatMulT(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).transpose();
        self.unary(a, v, Op::Transpose(a))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).add(self.value(b))?;
        Ok(self.binary(a, b, v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).sub(self.value(b))?;
        Ok(self.binary(a, b, v, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).hadamard(self.value(b))?;
        Ok(self.binary(a, b, v, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).scale(c);
        self.unary(a, v, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).map(|x| x + c);
        self.unary(a, v, Op::AddScalar(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x * x);
        self.unary(a, v, Op::Square(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.max(0.0));
        self.unary(a, v, Op::Relu(a))
    }

    /// `max(0, margin − a)` elementwise.
    pub fn hinge(&mut self, a: Var, margin: f64) -> Var {
        let neg = self.scale(a, -1.0);
        let shifted = self.add_scalar(neg, margin);
        self.relu(shifted)
    }

    pub fn row_norm(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let norms = (0..m.rows())
            .map(|i| m.row(i).iter().map(|x| x * x).sum::<f64>().sqrt())
            .collect();
        self.unary(a, Matrix::col_vector(norms), Op::RowNorm(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        self.unary(a, Matrix::filled(1, 1, s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let m = self.value(a);
        if m.is_empty() {
            return Err(Error::Contract("mean of an empty matrix".into()));
        }
        let s = m.sum() / m.len() as f64;
        Ok(self.unary(a, Matrix::filled(1, 1, s), Op::Mean(a)))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let mut out = m.clone();
        for i in 0..out.rows() {
            softmax_in_place(out.row_mut(i));
        }
        self.unary(a, out, Op::SoftmaxRows(a))
    }

    pub fn gather_rows(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let v = self.value(a).gather_rows(indices)?;
        Ok(self.unary(a, v, Op::GatherRows(a, indices.to_vec())))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let mats: Vec<&Matrix> = parts.iter().map(|&p| self.value(p)).collect();
        let v = Matrix::vstack(&mats)?;
        let ng = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(Cow::Owned(v), Op::ConcatRows(parts.to_vec()), ng))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (am, rm) = (self.value(a), self.value(row));
        if rm.rows() != 1 || rm.cols() != am.cols() {
            return Err(Error::Dimension {
                op: "add_row",
                lhs: am.shape(),
                rhs: rm.shape(),
            });
        }
        let mut out = am.clone();
        for i in 0..out.rows() {
            for (o, r) in out.row_mut(i).iter_mut().zip(rm.as_slice()) {
                *o += r;
            }
        }
        Ok(self.binary(a, row, out, Op::AddRow(a, row)))
    }

    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (am, rm) = (self.value(a), self.value(row));
        if rm.rows() != 1 || rm.cols() != am.cols() {
            return Err(Error::Dimension {
                op: "mul_row",
                lhs: am.shape(),
                rhs: rm.shape(),
            });
        }
        let mut out = am.clone();
        for i in 0..out.rows() {
            for (o, r) in out.row_mut(i).iter_mut().zip(rm.as_slice()) {
                *o *= r;
            }
        }
        Ok(self.binary(a, row, out, Op::MulRow(a, row)))
    }

    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let m = self.value(a);
        if m.rows() == 0 {
            return Err(Error::Contract("mean over zero rows".into()));
        }
        let mut out = vec![0.0; m.cols()];
        for i in 0..m.rows() {
            for (o, x) in out.iter_mut().zip(m.row(i)) {
                *o += x;
            }
        }
        let n = m.rows() as f64;
        out.iter_mut().for_each(|o| *o /= n);
        Ok(self.unary(a, Matrix::row_vector(out), Op::MeanRows(a)))
    }

    pub fn standardize_rows(&mut self, a: Var, eps: f64) -> Var {
        let m = self.value(a);
        let mut out = m.clone();
        for i in 0..out.rows() {
            let row = out.row_mut(i);
            let (mu, sigma) = row_moments(row, eps);
            row.iter_mut().for_each(|x| *x = (*x - mu) / sigma);
        }
        self.unary(a, out, Op::Standardize(a, eps))
    }

    /// Mean cross-entropy of `logits` (n×C) against `labels` (length n).
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let m = self.value(logits);
        if m.rows() != labels.len() || m.rows() == 0 {
            return Err(Error::Dimension {
                op: "cross_entropy",
                lhs: m.shape(),
                rhs: (labels.len(), 1),
            });
        }
        let mut total = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            if y >= m.cols() {
                return Err(Error::Index {
                    index: y,
                    size: m.cols(),
                });
            }
            total += log_sum_exp(m.row(i)) - m.get(i, y);
        }
        let v = Matrix::filled(1, 1, total / labels.len() as f64);
        Ok(self.unary(logits, v, Op::CrossEntropy(logits, labels.to_vec())))
    }

    /// Reverse pass from a scalar `loss`, returning one gradient per
    /// registered parameter (zeros for parameters the loss does not reach).
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.shape() != (1, 1) {
            return Err(Error::Contract(format!(
                "backward needs a 1x1 loss, got {:?}",
                lv.shape()
            )));
        }
        let mut adj: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        adj[loss.0] = Some(Matrix::filled(1, 1, 1.0));
        let mut visited = Vec::new();

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if matches!(node.op, Op::Leaf) || !node.needs_grad {
                continue;
            }
            let Some(g) = adj[idx].take() else { continue };
            visited.push(idx);
            self.propagate(idx, &g, &mut adj)?;
        }

        let grads = self
            .params
            .iter()
            .map(|&p| {
                adj[p.0]
                    .take()
                    .unwrap_or_else(|| Matrix::zeros(self.value(p).rows(), self.value(p).cols()))
            })
            .collect();
        Ok(Gradients {
            params: self.params.clone(),
            grads,
            visited,
        })
    }

    fn propagate(&self, idx: usize, g: &Matrix, adj: &mut [Option<Matrix>]) -> Result<()> {
        let out = &*self.nodes[idx].value;
        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.needs(*a) {
                    let ga = g.matmul_t(self.value(*b))?;
                    accumulate(adj, *a, ga)?;
                }
                if self.needs(*b) {
                    let gb = self.value(*a).t_matmul(g)?;
                    accumulate(adj, *b, gb)?;
                }
            }
            Op::MatMulT(a, b) => {
                if self.needs(*a) {
                    let ga = g.matmul(self.value(*b))?;
                    accumulate(adj, *a, ga)?;
                }
                if self.needs(*b) {
                    let gb = g.t_matmul(self.value(*a))?;
                    accumulate(adj, *b, gb)?;
                }
            }
            Op::Transpose(a) => self.send(adj, *a, || Ok(g.transpose()))?,
            Op::Add(a, b) => {
                self.send(adj, *a, || Ok(g.clone()))?;
                self.send(adj, *b, || Ok(g.clone()))?;
            }
            Op::Sub(a, b) => {
                self.send(adj, *a, || Ok(g.clone()))?;
                self.send(adj, *b, || Ok(g.scale(-1.0)))?;
            }
            Op::Mul(a, b) => {
                self.send(adj, *a, || g.hadamard(self.value(*b)))?;
                self.send(adj, *b, || g.hadamard(self.value(*a)))?;
            }
            Op::Scale(a, c) => self.send(adj, *a, || Ok(g.scale(*c)))?,
            Op::AddScalar(a) => self.send(adj, *a, || Ok(g.clone()))?,
            Op::Square(a) => self.send(adj, *a, || {
                let x = self.value(*a);
                Ok(Matrix::from_fn(x.rows(), x.cols(), |i, j| {
                    2.0 * x.get(i, j) * g.get(i, j)
                }))
            })?,
            Op::Relu(a) => self.send(adj, *a, || {
                let x = self.value(*a);
                Ok(Matrix::from_fn(x.rows(), x.cols(), |i, j| {
                    if x.get(i, j) > 0.0 {
                        g.get(i, j)
                    } else {
                        0.0
                    }
                }))
            })?,
            Op::RowNorm(a) => self.send(adj, *a, || {
                let x = self.value(*a);
                Ok(Matrix::from_fn(x.rows(), x.cols(), |i, j| {
                    let n = out.get(i, 0);
                    if n > 0.0 {
                        g.get(i, 0) * x.get(i, j) / n
                    } else {
                        0.0
                    }
                }))
            })?,
            Op::Sum(a) => self.send(adj, *a, || {
                let x = self.value(*a);
                Ok(Matrix::filled(x.rows(), x.cols(), g.get(0, 0)))
            })?,
            Op::Mean(a) => self.send(adj, *a, || {
                let x = self.value(*a);
                Ok(Matrix::filled(x.rows(), x.cols(), g.get(0, 0) / x.len() as f64))
            })?,
            Op::SoftmaxRows(a) => self.send(adj, *a, || {
                let mut ga = Matrix::zeros(out.rows(), out.cols());
                for i in 0..out.rows() {
                    let s = out.row(i);
                    let gi = g.row(i);
                    let dot: f64 = s.iter().zip(gi).map(|(s, g)| s * g).sum();
                    for (o, (s, g)) in ga.row_mut(i).iter_mut().zip(s.iter().zip(gi)) {
                        *o = s * (g - dot);
                    }
                }
                Ok(ga)
            })?,
            Op::GatherRows(a, indices) => self.send(adj, *a, || {
                let x = self.value(*a);
                let mut ga = Matrix::zeros(x.rows(), x.cols());
                for (k, &i) in indices.iter().enumerate() {
                    for (o, v) in ga.row_mut(i).iter_mut().zip(g.row(k)) {
                        *o += v;
                    }
                }
                Ok(ga)
            })?,
            Op::ConcatRows(parts) => {
                let mut start = 0;
                for &p in parts {
                    let rows = self.value(p).rows();
                    let range: Vec<usize> = (start..start + rows).collect();
                    self.send(adj, p, || g.gather_rows(&range))?;
                    start += rows;
                }
            }
            Op::AddRow(a, r) => {
                self.send(adj, *a, || Ok(g.clone()))?;
                self.send(adj, *r, || Ok(column_sums(g)))?;
            }
            Op::MulRow(a, r) => {
                let rv = self.value(*r);
                let av = self.value(*a);
                self.send(adj, *a, || {
                    Ok(Matrix::from_fn(g.rows(), g.cols(), |i, j| {
                        g.get(i, j) * rv.get(0, j)
                    }))
                })?;
                self.send(adj, *r, || Ok(column_sums(&g.hadamard(av)?)))?;
            }
            Op::MeanRows(a) => self.send(adj, *a, || {
                let x = self.value(*a);
                let n = x.rows() as f64;
                Ok(Matrix::from_fn(x.rows(), x.cols(), |_, j| g.get(0, j) / n))
            })?,
            Op::Standardize(a, eps) => self.send(adj, *a, || {
                let x = self.value(*a);
                let mut ga = Matrix::zeros(x.rows(), x.cols());
                let n = x.cols() as f64;
                for i in 0..x.rows() {
                    let (_, sigma) = row_moments(x.row(i), *eps);
                    let y = out.row(i);
                    let gi = g.row(i);
                    let mean_g = gi.iter().sum::<f64>() / n;
                    let mean_gy = gi.iter().zip(y).map(|(g, y)| g * y).sum::<f64>() / n;
                    for (o, (gv, yv)) in ga.row_mut(i).iter_mut().zip(gi.iter().zip(y)) {
                        *o = (gv - mean_g - yv * mean_gy) / sigma;
                    }
                }
                Ok(ga)
            })?,
            Op::CrossEntropy(a, labels) => self.send(adj, *a, || {
                let z = self.value(*a);
                let scale = g.get(0, 0) / labels.len() as f64;
                let mut ga = z.clone();
                for (i, &y) in labels.iter().enumerate() {
                    let row = ga.row_mut(i);
                    softmax_in_place(row);
                    row[y] -= 1.0;
                    row.iter_mut().for_each(|v| *v *= scale);
                }
                Ok(ga)
            })?,
        }
        Ok(())
    }

    fn send(
        &self,
        adj: &mut [Option<Matrix>],
        target: Var,
        grad: impl FnOnce() -> Result<Matrix>,
    ) -> Result<()> {
        if self.needs(target) {
            accumulate(adj, target, grad()?)?;
        }
        Ok(())
    }
}

fn accumulate(adj: &mut [Option<Matrix>], target: Var, g: Matrix) -> Result<()> {
    match &mut adj[target.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

fn column_sums(g: &Matrix) -> Matrix {
    let mut out = vec![0.0; g.cols()];
    for i in 0..g.rows() {
        for (o, v) in out.iter_mut().zip(g.row(i)) {
            *o += v;
        }
    }
    Matrix::row_vector(out)
}

fn row_moments(row: &[f64], eps: f64) -> (f64, f64) {
    let n = row.len() as f64;
    let mu = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / n;
    (mu, (var + eps).sqrt())
}

pub(crate) fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    row.iter_mut().for_each(|x| *x /= total);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gradcheck::central_difference;

    fn toy(rows: usize, cols: usize, seed: u64) -> Matrix {
        // small deterministic pseudo-random fill, independent of the rand crate
        let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        Matrix::from_fn(rows, cols, |_, _| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        })
    }

    fn check(params: Vec<Matrix>, build: impl Fn(&mut Tape, &[Var]) -> Result<Var>) {
        let f = |ps: &[Matrix]| {
            let mut t = Tape::new();
            let vars: Vec<Var> = ps.iter().map(|p| t.param(p)).collect();
            let loss = build(&mut t, &vars).unwrap();
            t.scalar(loss)
        };
        let mut t = Tape::new();
        let vars: Vec<Var> = params.iter().map(|p| t.param(p)).collect();
        let loss = build(&mut t, &vars).unwrap();
        let grads = t.backward(loss).unwrap();
        for (b, g) in grads.as_slice().iter().enumerate() {
            for idx in 0..g.len() {
                let numeric = central_difference(&f, &params, b, idx, 1e-6);
                let analytic = g.as_slice()[idx];
                let rel = (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-12);
                assert!(
                    rel < 1e-4 || (analytic - numeric).abs() < 1e-9,
                    "block {b} coord {idx}: analytic {analytic} numeric {numeric}"
                );
            }
        }
    }

    #[test]
    fn sum_gives_ones() {
        let e = toy(3, 4, 1);
        let mut t = Tape::new();
        let v = t.param(&e);
        let s = t.sum(v);
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(v).unwrap(), &Matrix::filled(3, 4, 1.0));
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let e = toy(2, 2, 1);
        let mut t = Tape::new();
        let v = t.param(&e);
        assert!(matches!(t.backward(v), Err(Error::Contract(_))));
    }

    #[test]
    fn reused_values_accumulate() {
        // loss = sum(x + x) → gradient 2
        let e = toy(2, 3, 5);
        let mut t = Tape::new();
        let v = t.param(&e);
        let s = t.add(v, v).unwrap();
        let l = t.sum(s);
        let g = t.backward(l).unwrap();
        assert_eq!(g.get(v).unwrap(), &Matrix::filled(2, 3, 2.0));
    }

    #[test]
    fn backward_visits_in_reverse_recording_order() {
        let e = toy(2, 2, 3);
        let mut t = Tape::new();
        let v = t.param(&e);
        let a = t.square(v);
        let b = t.scale(a, 3.0);
        let c = t.sum(b);
        let g = t.backward(c).unwrap();
        assert_eq!(g.visit_order(), &[c.index(), b.index(), a.index()]);
    }

    #[test]
    fn constants_get_no_gradient_flow() {
        let e = toy(2, 2, 3);
        let k = toy(2, 2, 4);
        let mut t = Tape::new();
        let kv = t.constant(&k);
        let kk = t.square(kv);
        let v = t.param(&e);
        let p = t.mul(v, kk).unwrap();
        let l = t.sum(p);
        let g = t.backward(l).unwrap();
        assert!(!g.visit_order().contains(&kk.index()));
        assert_eq!(g.get(v).unwrap(), &k.map(|x| x * x));
    }

    #[test]
    fn matmul_family_matches_finite_differences() {
        check(vec![toy(3, 4, 1), toy(4, 2, 2), toy(5, 4, 3)], |t, v| {
            let ab = t.matmul(v[0], v[1])?;
            let cat = t.matmul_t(v[2], v[0])?;
            let tr = t.transpose(cat);
            let sq = t.square(tr);
            let s1 = t.sum(sq);
            let s2 = t.sum(ab);
            let s2 = t.scale(s2, 0.7);
            t.add(s1, s2)
        });
    }

    #[test]
    fn softmax_and_cross_entropy_match_finite_differences() {
        check(vec![toy(3, 5, 7), toy(5, 4, 8)], |t, v| {
            let s = t.softmax_rows(v[0]);
            let z = t.matmul(s, v[1])?;
            t.cross_entropy(z, &[0, 3, 1])
        });
    }

    #[test]
    fn norms_hinges_and_broadcasts_match_finite_differences() {
        check(vec![toy(4, 3, 9), toy(1, 3, 10), toy(1, 3, 11)], |t, v| {
            let a = t.mul_row(v[0], v[1])?;
            let a = t.add_row(a, v[2])?;
            let n = t.row_norm(a);
            let h = t.hinge(n, 1.0);
            let h2 = t.square(h);
            let r = t.relu(a);
            let m = t.mean_rows(r)?;
            let ms = t.sum(m);
            let hs = t.mean(h2)?;
            t.add(ms, hs)
        });
    }

    #[test]
    fn standardize_gather_concat_match_finite_differences() {
        check(vec![toy(4, 6, 12), toy(2, 6, 13)], |t, v| {
            let g = t.gather_rows(v[0], &[2, 0, 2])?;
            let c = t.concat_rows(&[g, v[1]])?;
            let s = t.standardize_rows(c, 1e-5);
            let w = t.add_scalar(s, 0.3);
            let sq = t.square(w);
            let sub = t.sub(sq, s)?;
            t.mean(sub)
        });
    }
}
