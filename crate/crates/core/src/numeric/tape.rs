//! Reverse-mode automatic differentiation over a fixed set of matrix primitives.
//!
//! Every primitive appends one node holding its forward value. Nodes only ever
//! reference earlier nodes, so the tape index order is a topological order and
//! the backward sweep simply walks it in reverse.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::numeric::Matrix;

/// Handle to a value recorded on a [`GradientTape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
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
    Add(Var, Var),
    Hadamard(Var, Var),
    Scale(Var, f64),
    Transpose(Var),
    Silu(Var),
    RowSoftmax { x: Var, causal: bool },
    LayerNorm { x: Var, gain: Var, bias: Var },
    Embedding { table: Var, ids: Vec<usize> },
    CrossEntropy { logits: Var, targets: Vec<Option<usize>> },
    SliceRows { x: Var, start: usize },
    ConcatRows(Vec<Var>),
    Sum(Var),
}

#[derive(Debug)]
enum Aux {
    None,
    Norm { xhat: Matrix, inv_std: Vec<f64> },
    Probs(Matrix),
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
    aux: Aux,
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Default)]
pub struct GradientTape {
    nodes: Vec<Node>,
    params: Vec<Var>,
}

/// Gradients of a scalar loss with respect to every parameter leaf of a tape.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: HashMap<Var, Matrix>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(&v)
    }

    pub fn take(&mut self, v: Var) -> Option<Matrix> {
        self.grads.remove(&v)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

impl GradientTape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix, op: Op, requires_grad: bool, aux: Aux, name: &'static str) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(name));
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            aux,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Trainable leaf; [`GradientTape::backward`] reports a gradient for it.
    pub fn param(&mut self, value: Matrix) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
            aux: Aux::None,
        });
        let v = Var(self.nodes.len() - 1);
        self.params.push(v);
        v
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
            aux: Aux::None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::MatMul(a, b), rg, Aux::None, "matmul")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Add(a, b), rg, Aux::None, "add")
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).hadamard(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Hadamard(a, b), rg, Aux::None, "hadamard")
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let value = self.value(a).scale(s);
        let rg = self.rg(a);
        self.push(value, Op::Scale(a, s), rg, Aux::None, "scale")
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).transpose();
        let rg = self.rg(a);
        self.push(value, Op::Transpose(a), rg, Aux::None, "transpose")
    }

    /// `x · sigmoid(x)`, elementwise.
    pub fn silu(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(|x| x * sigmoid(x));
        let rg = self.rg(a);
        self.push(value, Op::Silu(a), rg, Aux::None, "silu")
    }

    /// Softmax over each row. With `causal`, entry (i, j) for j > i is masked to probability zero.
    pub fn row_softmax(&mut self, x: Var, causal: bool) -> Result<Var> {
        let xm = self.value(x);
        if causal && xm.rows() > xm.cols() {
            return Err(Error::Shape {
                op: "causal row_softmax",
                left: xm.shape(),
                right: xm.shape(),
            });
        }
        let (rows, cols) = xm.shape();
        let mut out = Matrix::zeros(rows, cols);
        for i in 0..rows {
            let limit = if causal { i + 1 } else { cols };
            let row = &xm.row(i)[..limit];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for (j, &v) in row.iter().enumerate() {
                let e = (v - max).exp();
                out.set(i, j, e);
                total += e;
            }
            for j in 0..limit {
                out.set(i, j, out.get(i, j) / total);
            }
        }
        let rg = self.rg(x);
        self.push(out, Op::RowSoftmax { x, causal }, rg, Aux::None, "row_softmax")
    }

    /// Normalizes each column to zero mean and unit variance, then applies
    /// per-row `gain` and `bias` (both `rows × 1`).
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let xm = self.value(x);
        let (d, t) = xm.shape();
        for v in [gain, bias] {
            if self.value(v).shape() != (d, 1) {
                return Err(Error::Shape {
                    op: "layer_norm",
                    left: (d, 1),
                    right: self.value(v).shape(),
                });
            }
        }
        let g = self.value(gain).as_slice().to_vec();
        let b = self.value(bias).as_slice().to_vec();
        let mut xhat = Matrix::zeros(d, t);
        let mut out = Matrix::zeros(d, t);
        let mut inv_std = Vec::with_capacity(t);
        for j in 0..t {
            let mean = (0..d).map(|r| xm.get(r, j)).sum::<f64>() / d as f64;
            let var = (0..d).map(|r| (xm.get(r, j) - mean).powi(2)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std.push(is);
            for r in 0..d {
                let h = (xm.get(r, j) - mean) * is;
                xhat.set(r, j, h);
                out.set(r, j, g[r] * h + b[r]);
            }
        }
        let rg = self.rg(x) || self.rg(gain) || self.rg(bias);
        self.push(
            out,
            Op::LayerNorm { x, gain, bias },
            rg,
            Aux::Norm { xhat, inv_std },
            "layer_norm",
        )
    }

    /// Gathers columns of `table` (`d × vocab`) into a `d × ids.len()` matrix.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let tm = self.value(table);
        if let Some(&bad) = ids.iter().find(|&&i| i >= tm.cols()) {
            return Err(Error::InvalidArgument(format!(
                "embedding id {bad} out of range for table with {} columns",
                tm.cols()
            )));
        }
        let out = Matrix::from_fn(tm.rows(), ids.len(), |r, c| tm.get(r, ids[c]));
        let rg = self.rg(table);
        self.push(
            out,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            rg,
            Aux::None,
            "embedding",
        )
    }

    /// Mean token cross entropy of `logits` (`vocab × positions`) against the
    /// targets whose entry is `Some`; `None` positions are masked out.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[Option<usize>]) -> Result<Var> {
        let lm = self.value(logits);
        let (v, t) = lm.shape();
        if targets.len() != t {
            return Err(Error::InvalidArgument(format!(
                "{} targets for {t} logit columns",
                targets.len()
            )));
        }
        let count = targets.iter().filter(|x| x.is_some()).count();
        if count == 0 {
            return Err(Error::Empty("cross_entropy targets"));
        }
        let mut probs = Matrix::zeros(v, t);
        let mut total = 0.0;
        for (j, target) in targets.iter().enumerate() {
            let col = lm.col_vec(j);
            let max = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = col.iter().map(|&x| (x - max).exp()).sum();
            let lse = max + z.ln();
            for (r, &x) in col.iter().enumerate() {
                probs.set(r, j, (x - lse).exp());
            }
            if let Some(tgt) = *target {
                if tgt >= v {
                    return Err(Error::InvalidArgument(format!("target {tgt} >= vocab {v}")));
                }
                total += lse - col[tgt];
            }
        }
        let loss = Matrix::filled(1, 1, total / count as f64);
        let rg = self.rg(logits);
        self.push(
            loss,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
            },
            rg,
            Aux::Probs(probs),
            "cross_entropy",
        )
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xm = self.value(x);
        if start + len > xm.rows() || len == 0 {
            return Err(Error::InvalidArgument(format!(
                "row slice {start}..{} of {} rows",
                start + len,
                xm.rows()
            )));
        }
        let value = xm.slice_rows(start, len);
        let rg = self.rg(x);
        self.push(value, Op::SliceRows { x, start }, rg, Aux::None, "slice_rows")
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let mats: Vec<&Matrix> = parts.iter().map(|&p| self.value(p)).collect();
        let value = Matrix::vstack(&mats)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(value, Op::ConcatRows(parts.to_vec()), rg, Aux::None, "concat_rows")
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let value = Matrix::filled(1, 1, self.value(x).sum());
        let rg = self.rg(x);
        self.push(value, Op::Sum(x), rg, Aux::None, "sum")
    }

    /// Sweeps the tape in reverse from `loss` and returns a gradient for every
    /// parameter leaf. Leaves the loss does not depend on get zero matrices.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let shape = self.value(loss).shape();
        if shape != (1, 1) {
            return Err(Error::NonScalarLoss(shape.0, shape.1));
        }
        let mut grads: Vec<Option<Matrix>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::filled(1, 1, 1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads)?;
        }

        let grads = self
            .params
            .iter()
            .map(|&p| {
                let g = if p.0 <= loss.0 {
                    self.take_or_zero(&mut grads, p)
                } else {
                    let (r, c) = self.value(p).shape();
                    Matrix::zeros(r, c)
                };
                (p, g)
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn take_or_zero(&self, grads: &mut [Option<Matrix>], v: Var) -> Matrix {
        grads[v.0].take().unwrap_or_else(|| {
            let (r, c) = self.value(v).shape();
            Matrix::zeros(r, c)
        })
    }

    fn accumulate(&self, grads: &mut [Option<Matrix>], v: Var, g: Matrix) -> Result<()> {
        if !self.rg(v) {
            return Ok(());
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g)?,
            slot @ None => *slot = Some(g),
        }
        Ok(())
    }

    fn propagate(&self, node: &Node, g: &Matrix, grads: &mut [Option<Matrix>]) -> Result<()> {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.rg(*a) {
                    self.accumulate(grads, *a, g.matmul_t(self.value(*b))?)?;
                }
                if self.rg(*b) {
                    self.accumulate(grads, *b, self.value(*a).t_matmul(g)?)?;
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone())?;
                self.accumulate(grads, *b, g.clone())?;
            }
            Op::Hadamard(a, b) => {
                if self.rg(*a) {
                    self.accumulate(grads, *a, g.hadamard(self.value(*b))?)?;
                }
                if self.rg(*b) {
                    self.accumulate(grads, *b, g.hadamard(self.value(*a))?)?;
                }
            }
            Op::Scale(a, s) => self.accumulate(grads, *a, g.scale(*s))?,
            Op::Transpose(a) => self.accumulate(grads, *a, g.transpose())?,
            Op::Silu(a) => {
                let x = self.value(*a);
                let mut dx = g.clone();
                for (d, &xv) in dx.as_mut_slice().iter_mut().zip(x.as_slice()) {
                    let s = sigmoid(xv);
                    *d *= s * (1.0 + xv * (1.0 - s));
                }
                self.accumulate(grads, *a, dx)?;
            }
            Op::RowSoftmax { x, causal } => {
                let p = &node.value;
                let (rows, cols) = p.shape();
                let mut dx = Matrix::zeros(rows, cols);
                for i in 0..rows {
                    let limit = if *causal { i + 1 } else { cols };
                    let dot: f64 = (0..limit).map(|j| p.get(i, j) * g.get(i, j)).sum();
                    for j in 0..limit {
                        dx.set(i, j, p.get(i, j) * (g.get(i, j) - dot));
                    }
                }
                self.accumulate(grads, *x, dx)?;
            }
            Op::LayerNorm { x, gain, bias } => {
                let Aux::Norm { xhat, inv_std } = &node.aux else {
                    unreachable!("layer norm node without saved statistics")
                };
                let (d, t) = xhat.shape();
                let gv = self.value(*gain);
                if self.rg(*gain) {
                    let dg = Matrix::from_fn(d, 1, |r, _| (0..t).map(|j| g.get(r, j) * xhat.get(r, j)).sum());
                    self.accumulate(grads, *gain, dg)?;
                }
                if self.rg(*bias) {
                    let db = Matrix::from_fn(d, 1, |r, _| (0..t).map(|j| g.get(r, j)).sum());
                    self.accumulate(grads, *bias, db)?;
                }
                if self.rg(*x) {
                    let mut dx = Matrix::zeros(d, t);
                    for j in 0..t {
                        let dxhat: Vec<f64> = (0..d).map(|r| g.get(r, j) * gv.get(r, 0)).collect();
                        let mean_d = dxhat.iter().sum::<f64>() / d as f64;
                        let mean_dx = (0..d).map(|r| dxhat[r] * xhat.get(r, j)).sum::<f64>() / d as f64;
                        for r in 0..d {
                            dx.set(r, j, inv_std[j] * (dxhat[r] - mean_d - xhat.get(r, j) * mean_dx));
                        }
                    }
                    self.accumulate(grads, *x, dx)?;
                }
            }
            Op::Embedding { table, ids } => {
                let (d, v) = self.value(*table).shape();
                let mut dt = Matrix::zeros(d, v);
                for (c, &id) in ids.iter().enumerate() {
                    for r in 0..d {
                        dt.set(r, id, dt.get(r, id) + g.get(r, c));
                    }
                }
                self.accumulate(grads, *table, dt)?;
            }
            Op::CrossEntropy { logits, targets } => {
                let Aux::Probs(probs) = &node.aux else {
                    unreachable!("cross entropy node without saved probabilities")
                };
                let upstream = g.get(0, 0);
                let count = targets.iter().filter(|t| t.is_some()).count() as f64;
                let mut dl = Matrix::zeros(probs.rows(), probs.cols());
                for (j, target) in targets.iter().enumerate() {
                    if let Some(tgt) = *target {
                        for r in 0..probs.rows() {
                            let onehot = if r == tgt { 1.0 } else { 0.0 };
                            dl.set(r, j, upstream * (probs.get(r, j) - onehot) / count);
                        }
                    }
                }
                self.accumulate(grads, *logits, dl)?;
            }
            Op::SliceRows { x, start } => {
                let (rows, cols) = self.value(*x).shape();
                let mut dx = Matrix::zeros(rows, cols);
                for r in 0..g.rows() {
                    for c in 0..cols {
                        dx.set(start + r, c, g.get(r, c));
                    }
                }
                self.accumulate(grads, *x, dx)?;
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let rows = self.value(p).rows();
                    if self.rg(p) {
                        self.accumulate(grads, p, g.slice_rows(offset, rows))?;
                    }
                    offset += rows;
                }
            }
            Op::Sum(x) => {
                let (r, c) = self.value(*x).shape();
                self.accumulate(grads, *x, Matrix::filled(r, c, g.get(0, 0)))?;
            }
        }
        Ok(())
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
