//! Reverse-mode differentiation over dense `f64` matrices.
//!
//! A [`Tape`] records one forward pass. Every op appends a node holding its
//! output value and the handles of its inputs; [`Tape::backward`] walks the
//! nodes in reverse insertion order (which is a topological order) exactly
//! once. Per-edge quantities are `m x 1` column matrices.

use std::ops::{Deref, Range};
use std::sync::Arc;

use ndarray::{concatenate, s, Array2, ArrayView2, Axis};
use rand::Rng;

use super::aggregate::{self, Normalization};
use super::sparse::CsrMatrix;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Constant operand that is either borrowed for the tape's lifetime or
/// shared from a cache.
#[derive(Debug)]
pub enum Shared<'a, T> {
    Borrowed(&'a T),
    Owned(Arc<T>),
}

impl<T> Deref for Shared<'_, T> {
    type Target = T;
    fn deref(&self) -> &T {
        match self {
            Shared::Borrowed(r) => r,
            Shared::Owned(a) => a,
        }
    }
}

impl<'a, T> From<&'a T> for Shared<'a, T> {
    fn from(r: &'a T) -> Self {
        Shared::Borrowed(r)
    }
}

impl<T> From<Arc<T>> for Shared<'_, T> {
    fn from(a: Arc<T>) -> Self {
        Shared::Owned(a)
    }
}

enum Op<'a> {
    Leaf,
    Const,
    MatMul(Var, Var),
    /// Constant dense left operand, e.g. the raw feature matrix.
    MatMulConst(Shared<'a, Array2<f64>>, Var),
    SpMM(Shared<'a, CsrMatrix>, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Affine(Var, f64),
    Relu(Var),
    Tanh(Var),
    ConcatCols(Vec<Var>),
    SliceRows(Var, Range<usize>),
    Dropout(Var, Array2<f64>),
    RowGather(Var, &'a [usize]),
    SoftmaxRows(Var),
    CrossEntropy {
        logits: Var,
        targets: &'a [(usize, usize)],
        probs: Array2<f64>,
    },
    L2RowDiff(Var, &'a [(usize, usize)]),
    RowDot(Var, Var),
    Sum(Var),
    Aggregate {
        z: Var,
        w: Var,
        edges: &'a [(usize, usize)],
        norm: Normalization,
    },
}

struct Node<'a> {
    value: Array2<f64>,
    op: Op<'a>,
    requires_grad: bool,
}

/// Log floor inside cross-entropy.
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
    clamped_degrees: usize,
}

/// Gradients produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`; zeros if `v` did not
    /// influence the loss.
    pub fn wrt(&self, v: Var) -> Array2<f64> {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Array2::zeros(self.shapes[v.0]),
        }
    }

    pub fn take(&mut self, v: Var) -> Array2<f64> {
        self.grads[v.0]
            .take()
            .unwrap_or_else(|| Array2::zeros(self.shapes[v.0]))
    }
}

fn shape_str(a: &Array2<f64>) -> String {
    format!("{}x{}", a.nrows(), a.ncols())
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Nodes whose aggregation degree fell at or below the floor so far.
    pub fn clamped_degrees(&self) -> usize {
        self.clamped_degrees
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    /// Value of a `1 x 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    fn push(
        &mut self,
        name: &str,
        value: Array2<f64>,
        op: Op<'a>,
        requires_grad: bool,
    ) -> Result<Var> {
        if value.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(name.to_string()));
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Trainable input.
    pub fn leaf(&mut self, value: Array2<f64>) -> Result<Var> {
        self.push("leaf", value, Op::Leaf, true)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, value: Array2<f64>) -> Result<Var> {
        self.push("constant", value, Op::Const, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.ncols() != vb.nrows() {
            return Err(Error::shape(
                "matmul",
                format!("{} x {}", shape_str(va), shape_str(vb)),
            ));
        }
        let out = va.dot(vb);
        let rg = self.rg(a) || self.rg(b);
        self.push("matmul", out, Op::MatMul(a, b), rg)
    }

    /// `x * b` for a borrowed constant `x`.
    pub fn matmul_const(&mut self, x: impl Into<Shared<'a, Array2<f64>>>, b: Var) -> Result<Var> {
        let x = x.into();
        let vb = self.value(b);
        if x.ncols() != vb.nrows() {
            return Err(Error::shape(
                "matmul",
                format!("{} x {}", shape_str(&x), shape_str(vb)),
            ));
        }
        let out = x.dot(vb);
        let rg = self.rg(b);
        self.push("matmul", out, Op::MatMulConst(x, b), rg)
    }

    /// `s * b` for a borrowed sparse constant `s`.
    pub fn spmm(&mut self, s: impl Into<Shared<'a, CsrMatrix>>, b: Var) -> Result<Var> {
        let s = s.into();
        let vb = self.value(b);
        if s.shape().1 != vb.nrows() {
            return Err(Error::shape(
                "spmm",
                format!("{}x{} x {}", s.shape().0, s.shape().1, shape_str(vb)),
            ));
        }
        let out = s.matmul(vb.view());
        let rg = self.rg(b);
        self.push("spmm", out, Op::SpMM(s, b), rg)
    }

    /// Adds the `1 x c` row `b` to every row of `z`.
    pub fn add_bias(&mut self, z: Var, b: Var) -> Result<Var> {
        let (vz, vb) = (self.value(z), self.value(b));
        if vb.nrows() != 1 || vb.ncols() != vz.ncols() {
            return Err(Error::shape(
                "add_bias",
                format!("{} + {}", shape_str(vz), shape_str(vb)),
            ));
        }
        let out = vz + vb;
        let rg = self.rg(z) || self.rg(b);
        self.push("add_bias", out, Op::AddBias(z, b), rg)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.dim() != vb.dim() {
            return Err(Error::shape(
                op,
                format!("{} vs {}", shape_str(va), shape_str(vb)),
            ));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.value(a) + self.value(b);
        let rg = self.rg(a) || self.rg(b);
        self.push("add", out, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = self.value(a) - self.value(b);
        let rg = self.rg(a) || self.rg(b);
        self.push("sub", out, Op::Sub(a, b), rg)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.value(a) * self.value(b);
        let rg = self.rg(a) || self.rg(b);
        self.push("mul", out, Op::Mul(a, b), rg)
    }

    /// `scale * x + shift`
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Result<Var> {
        let out = self.value(x).mapv(|v| scale * v + shift);
        let rg = self.rg(x);
        self.push("affine", out, Op::Affine(x, scale), rg)
    }

    pub fn scale(&mut self, x: Var, scale: f64) -> Result<Var> {
        self.affine(x, scale, 0.0)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).mapv(|v| v.max(0.0));
        let rg = self.rg(x);
        self.push("relu", out, Op::Relu(x), rg)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).mapv(f64::tanh);
        let rg = self.rg(x);
        self.push("tanh", out, Op::Tanh(x), rg)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::shape("concat_cols", "no inputs"));
        }
        let views: Vec<ArrayView2<f64>> = parts.iter().map(|&p| self.value(p).view()).collect();
        let out =
            concatenate(Axis(1), &views).map_err(|e| Error::shape("concat_cols", e.to_string()))?;
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push("concat_cols", out, Op::ConcatCols(parts.to_vec()), rg)
    }

    pub fn slice_rows(&mut self, x: Var, rows: Range<usize>) -> Result<Var> {
        let vx = self.value(x);
        if rows.start > rows.end || rows.end > vx.nrows() {
            return Err(Error::shape(
                "slice_rows",
                format!("{rows:?} of {}", shape_str(vx)),
            ));
        }
        let out = vx.slice(s![rows.clone(), ..]).to_owned();
        let rg = self.rg(x);
        self.push("slice_rows", out, Op::SliceRows(x, rows), rg)
    }

    /// Inverted dropout. `rng == None` means evaluation mode, which returns
    /// `x` itself so the backward path is the identity.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, p: f64, rng: Option<&mut R>) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Contract(format!(
                "dropout probability {p} outside [0, 1)"
            )));
        }
        let Some(rng) = rng else { return Ok(x) };
        if p == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - p);
        let shape = self.value(x).raw_dim();
        let mask =
            Array2::from_shape_simple_fn(
                shape,
                || if rng.random::<f64>() < p { 0.0 } else { keep },
            );
        let out = self.value(x) * &mask;
        let rg = self.rg(x);
        self.push("dropout", out, Op::Dropout(x, mask), rg)
    }

    /// Rows `ids` of `x`, in order; ids may repeat.
    pub fn row_gather(&mut self, x: Var, ids: &'a [usize]) -> Result<Var> {
        let vx = self.value(x);
        if let Some(&bad) = ids.iter().find(|&&i| i >= vx.nrows()) {
            return Err(Error::shape(
                "row_gather",
                format!("row {bad} of {}", shape_str(vx)),
            ));
        }
        let out = vx.select(Axis(0), ids);
        let rg = self.rg(x);
        self.push("row_gather", out, Op::RowGather(x, ids), rg)
    }

    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let out = softmax(self.value(x).view());
        let rg = self.rg(x);
        self.push("softmax_rows", out, Op::SoftmaxRows(x), rg)
    }

    /// Mean negative log-likelihood of `targets = [(node, class)]` under
    /// `softmax(logits)`, with the log clamped at [`LOG_FLOOR`].
    pub fn cross_entropy(&mut self, logits: Var, targets: &'a [(usize, usize)]) -> Result<Var> {
        let vl = self.value(logits);
        if targets.is_empty() {
            return Err(Error::Contract(
                "cross-entropy over an empty node set".into(),
            ));
        }
        for &(i, c) in targets {
            if i >= vl.nrows() || c >= vl.ncols() {
                return Err(Error::shape(
                    "cross_entropy",
                    format!("target ({i}, {c}) outside {}", shape_str(vl)),
                ));
            }
        }
        let probs = softmax(vl.view());
        let loss = -targets
            .iter()
            .map(|&(i, c)| probs[[i, c]].max(LOG_FLOOR).ln())
            .sum::<f64>()
            / targets.len() as f64;
        let rg = self.rg(logits);
        self.push(
            "cross_entropy",
            Array2::from_elem((1, 1), loss),
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            },
            rg,
        )
    }

    /// Per-edge Euclidean distances `||x_u - x_v||_2` as an `m x 1` column.
    pub fn l2_rowdiff(&mut self, x: Var, edges: &'a [(usize, usize)]) -> Result<Var> {
        let vx = self.value(x);
        let n = vx.nrows();
        if let Some(&(u, v)) = edges.iter().find(|&&(u, v)| u >= n || v >= n) {
            return Err(Error::shape(
                "l2_rowdiff",
                format!("edge ({u}, {v}) with {n} rows"),
            ));
        }
        let out = Array2::from_shape_fn((edges.len(), 1), |(e, _)| {
            let (u, v) = edges[e];
            (&vx.row(u) - &vx.row(v)).mapv(|d| d * d).sum().sqrt()
        });
        let rg = self.rg(x);
        self.push("l2_rowdiff", out, Op::L2RowDiff(x, edges), rg)
    }

    /// Row-wise inner products as an `n x 1` column.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("row_dot", a, b)?;
        let out = (self.value(a) * self.value(b))
            .sum_axis(Axis(1))
            .insert_axis(Axis(1));
        let rg = self.rg(a) || self.rg(b);
        self.push("row_dot", out, Op::RowDot(a, b), rg)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let total = self.value(x).sum();
        let rg = self.rg(x);
        self.push("sum", Array2::from_elem((1, 1), total), Op::Sum(x), rg)
    }

    /// `D^{-1/2} A_w D^{-1/2} z` for per-edge weights `w` (`m x 1`); see
    /// [`super::aggregate`] for the degree floor convention.
    pub fn edge_weighted_aggregate(
        &mut self,
        z: Var,
        edges: &'a [(usize, usize)],
        w: Var,
        deg_floor: f64,
    ) -> Result<Var> {
        let (vz, vw) = (self.value(z), self.value(w));
        let n = vz.nrows();
        if vw.dim() != (edges.len(), 1) {
            return Err(Error::shape(
                "edge_weighted_aggregate",
                format!("weights {} for {} edges", shape_str(vw), edges.len()),
            ));
        }
        if let Some(&(u, v)) = edges.iter().find(|&&(u, v)| u >= n || v >= n) {
            return Err(Error::shape(
                "edge_weighted_aggregate",
                format!("edge ({u}, {v}) with {n} rows"),
            ));
        }
        let weights: Vec<f64> = vw.column(0).to_vec();
        let (out, norm) = aggregate::aggregate(n, edges, &weights, deg_floor, vz.view());
        if norm.clamped > 0 {
            self.clamped_degrees += norm.clamped;
            log::debug!("aggregation clamped {} node degrees", norm.clamped);
        }
        let rg = self.rg(z) || self.rg(w);
        self.push(
            "edge_weighted_aggregate",
            out,
            Op::Aggregate { z, w, edges, norm },
            rg,
        )
    }

    /// Back-propagates from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.dim() != (1, 1) {
            return Err(Error::Contract(format!(
                "backward needs a 1x1 loss, got {}",
                shape_str(lv)
            )));
        }
        let shapes: Vec<_> = self.nodes.iter().map(|n| n.value.dim()).collect();
        let mut grads: Vec<Option<Array2<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Array2::ones((1, 1)));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                grads[idx] = Some(g);
                continue;
            }
            let acc = |v: Var, d: Array2<f64>, grads: &mut Vec<Option<Array2<f64>>>| {
                if !self.nodes[v.0].requires_grad {
                    return;
                }
                match &mut grads[v.0] {
                    Some(existing) => *existing += &d,
                    slot @ None => *slot = Some(d),
                }
            };
            match &node.op {
                Op::Leaf | Op::Const => {}
                Op::MatMul(a, b) => {
                    if self.rg(*a) {
                        acc(*a, g.dot(&self.value(*b).t()), &mut grads);
                    }
                    if self.rg(*b) {
                        acc(*b, self.value(*a).t().dot(&g), &mut grads);
                    }
                }
                Op::MatMulConst(x, b) => acc(*b, x.t().dot(&g), &mut grads),
                Op::SpMM(s, b) => acc(*b, s.transpose_matmul(g.view()), &mut grads),
                Op::AddBias(z, b) => {
                    if self.rg(*b) {
                        acc(*b, g.sum_axis(Axis(0)).insert_axis(Axis(0)), &mut grads);
                    }
                    acc(*z, g.clone(), &mut grads);
                }
                Op::Add(a, b) => {
                    acc(*a, g.clone(), &mut grads);
                    acc(*b, g.clone(), &mut grads);
                }
                Op::Sub(a, b) => {
                    acc(*a, g.clone(), &mut grads);
                    acc(*b, -&g, &mut grads);
                }
                Op::Mul(a, b) => {
                    if self.rg(*a) {
                        acc(*a, &g * self.value(*b), &mut grads);
                    }
                    if self.rg(*b) {
                        acc(*b, &g * self.value(*a), &mut grads);
                    }
                }
                Op::Affine(x, scale) => acc(*x, &g * *scale, &mut grads),
                Op::Relu(x) => {
                    let mut d = g.clone();
                    d.zip_mut_with(self.value(*x), |d, &v| {
                        if v <= 0.0 {
                            *d = 0.0
                        }
                    });
                    acc(*x, d, &mut grads);
                }
                Op::Tanh(x) => {
                    let mut d = g.clone();
                    d.zip_mut_with(&node.value, |d, &t| *d *= 1.0 - t * t);
                    acc(*x, d, &mut grads);
                }
                Op::ConcatCols(parts) => {
                    let mut col = 0;
                    for &p in parts {
                        let w = self.value(p).ncols();
                        acc(p, g.slice(s![.., col..col + w]).to_owned(), &mut grads);
                        col += w;
                    }
                }
                Op::SliceRows(x, rows) => {
                    let mut d = Array2::zeros(self.value(*x).raw_dim());
                    d.slice_mut(s![rows.clone(), ..]).assign(&g);
                    acc(*x, d, &mut grads);
                }
                Op::Dropout(x, mask) => acc(*x, &g * mask, &mut grads),
                Op::RowGather(x, ids) => {
                    let mut d = Array2::zeros(self.value(*x).raw_dim());
                    for (k, &i) in ids.iter().enumerate() {
                        let mut row = d.row_mut(i);
                        row += &g.row(k);
                    }
                    acc(*x, d, &mut grads);
                }
                Op::SoftmaxRows(x) => {
                    let y = &node.value;
                    let gy = (&g * y).sum_axis(Axis(1)).insert_axis(Axis(1));
                    let d = y * &(&g - &gy);
                    acc(*x, d, &mut grads);
                }
                Op::CrossEntropy {
                    logits,
                    targets,
                    probs,
                } => {
                    let scale = g[[0, 0]] / targets.len() as f64;
                    let mut d = Array2::zeros(probs.raw_dim());
                    for &(i, c) in targets.iter() {
                        if probs[[i, c]] <= LOG_FLOOR {
                            continue;
                        }
                        let mut row = d.row_mut(i);
                        row.scaled_add(scale, &probs.row(i));
                        row[c] -= scale;
                    }
                    acc(*logits, d, &mut grads);
                }
                Op::L2RowDiff(x, edges) => {
                    let vx = self.value(*x);
                    let mut d = Array2::zeros(vx.raw_dim());
                    for (e, &(u, v)) in edges.iter().enumerate() {
                        let dist = node.value[[e, 0]];
                        if dist <= 0.0 {
                            continue;
                        }
                        let coef = g[[e, 0]] / dist;
                        let diff = &vx.row(u) - &vx.row(v);
                        d.row_mut(u).scaled_add(coef, &diff);
                        d.row_mut(v).scaled_add(-coef, &diff);
                    }
                    acc(*x, d, &mut grads);
                }
                Op::RowDot(a, b) => {
                    if self.rg(*a) {
                        acc(*a, self.value(*b) * &g, &mut grads);
                    }
                    if self.rg(*b) {
                        acc(*b, self.value(*a) * &g, &mut grads);
                    }
                }
                Op::Sum(x) => {
                    let d = Array2::from_elem(self.value(*x).raw_dim(), g[[0, 0]]);
                    acc(*x, d, &mut grads);
                }
                Op::Aggregate { z, w, edges, norm } => {
                    let weights: Vec<f64> = self.value(*w).column(0).to_vec();
                    let (gz, gw) = aggregate::aggregate_backward(
                        edges,
                        &weights,
                        norm,
                        self.value(*z).view(),
                        node.value.view(),
                        g.view(),
                    );
                    acc(*z, gz, &mut grads);
                    if self.rg(*w) {
                        acc(
                            *w,
                            Array2::from_shape_vec((gw.len(), 1), gw).unwrap(),
                            &mut grads,
                        );
                    }
                }
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads, shapes })
    }
}

/// Numerically stable row-wise softmax.
pub fn softmax(x: ArrayView2<f64>) -> Array2<f64> {
    let mut out = x.to_owned();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let z = row.sum();
        row /= z;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn relu_forward_backward() {
        let mut t = Tape::new();
        let x = t.leaf(array![[-1.0, 2.0]]).unwrap();
        let y = t.relu(x).unwrap();
        assert_eq!(t.value(y), &array![[0.0, 2.0]]);
        let s = t.sum(y).unwrap();
        let g = t.backward(s).unwrap();
        assert_eq!(g.wrt(x), array![[0.0, 1.0]]);
    }

    #[test]
    fn uniform_cross_entropy_is_ln_c() {
        let targets = [(0, 0), (1, 2), (2, 1)];
        let mut t = Tape::new();
        let z = t.leaf(Array2::zeros((3, 3))).unwrap();
        let l = t.cross_entropy(z, &targets).unwrap();
        assert!((t.scalar(l) - 3f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn dropout_identity_cases() {
        let mut t = Tape::new();
        let z = t.leaf(array![[1.0, 2.0], [3.0, 4.0]]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let same = t.dropout(z, 0.0, Some(&mut rng)).unwrap();
        assert_eq!(same, z);
        let eval = t.dropout(z, 0.5, None::<&mut ChaCha8Rng>).unwrap();
        assert_eq!(eval, z);
        assert!(t.dropout(z, 1.0, Some(&mut rng)).is_err());
    }

    #[test]
    fn sum_of_leaf_has_unit_gradient() {
        let mut t = Tape::new();
        let z = t.leaf(Array2::from_elem((2, 3), 0.7)).unwrap();
        let unused = t.leaf(Array2::ones((4, 1))).unwrap();
        let s = t.sum(z).unwrap();
        let g = t.backward(s).unwrap();
        assert_eq!(g.wrt(z), Array2::<f64>::ones((2, 3)));
        assert_eq!(g.wrt(unused), Array2::<f64>::zeros((4, 1)));
    }

    #[test]
    fn squared_product_gradient() {
        let x = array![[1.0, 2.0], [0.5, -1.0], [3.0, 0.0]];
        let w = array![[0.3, -0.2], [0.1, 0.4]];
        let mut t = Tape::new();
        let xv = t.constant(x.clone()).unwrap();
        let wv = t.leaf(w.clone()).unwrap();
        let xw = t.matmul(xv, wv).unwrap();
        let sq = t.mul(xw, xw).unwrap();
        let l = t.sum(sq).unwrap();
        let g = t.backward(l).unwrap();
        let expected = x.t().dot(&x.dot(&w)) * 2.0;
        let diff = (&g.wrt(wv) - &expected).mapv(f64::abs).sum();
        assert!(diff < 1e-12);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut t = Tape::new();
        let z = t.leaf(Array2::ones((2, 2))).unwrap();
        assert!(matches!(t.backward(z), Err(Error::Contract(_))));
    }

    #[test]
    fn shape_mismatch_and_nonfinite_errors() {
        let mut t = Tape::new();
        let a = t.leaf(Array2::ones((2, 3))).unwrap();
        let b = t.leaf(Array2::ones((2, 3))).unwrap();
        assert!(matches!(
            t.matmul(a, b),
            Err(Error::Shape { op: "matmul", .. })
        ));
        let big = t.leaf(Array2::from_elem((1, 1), f64::MAX)).unwrap();
        match t.affine(big, 10.0, 0.0) {
            Err(Error::NonFinite(op)) => assert_eq!(op, "affine"),
            other => panic!("expected non-finite error, got {other:?}"),
        }
    }
}
