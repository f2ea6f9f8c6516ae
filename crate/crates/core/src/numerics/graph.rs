//! Reverse-mode differentiation over a recorded computation graph.
//!
//! Every forward operation appends a node holding its value; [`Graph::backward`]
//! walks the nodes in reverse and propagates adjoints. Parameters enter through
//! [`Graph::param`] and receive their gradients through [`Graph::accumulate_into`].
//!
//! The loss terms used in training are recorded as single fused nodes with
//! hand-derived adjoints rather than being expanded into elementwise ops.

use std::collections::HashMap;

use super::matrix::{dot, softmax_in_place, Matrix};
use super::param::Param;
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    /// a · bᵀ
    MatMulT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddRow(Var, Var),
    Hadamard(Var, Var),
    Scale(Var, f64),
    MulConst(Var, Matrix),
    LeakyRelu(Var, f64),
    SoftmaxRows(Var, f64),
    ConcatCols(Var, Var),
    SliceCols(Var, usize),
    ConcatRows(Var, Var),
    SliceRows(Var, usize),
    Exp(Var),
    Clamp(Var, f64, f64),
    Sum(Var),
    Mmd {
        x: Var,
        y: Var,
        grad_x: Matrix,
        grad_y: Matrix,
    },
    CrossEntropy {
        logits: Var,
        probs: Matrix,
        labels: Vec<usize>,
    },
    KlStdNormal {
        mu: Var,
        logvar: Var,
    },
    L1 {
        pred: Var,
        target: Var,
    },
    CosineRows {
        x: Var,
        normalized: Matrix,
        norms: Vec<f64>,
    },
    RelationalKl {
        sim: Var,
        /// d loss / d sim, computed in the forward pass.
        grad: Matrix,
    },
}

struct Node {
    value: Matrix,
    op: Op,
}

/// A single-use tape of matrix operations.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Matrix>>,
    params: HashMap<String, Var>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    /// Scalar value of a 1x1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v).item()
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).shape()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn constant(&mut self, m: Matrix) -> Var {
        self.push(m, Op::Leaf)
    }

    /// Binds a parameter. Binding the same name twice returns the same node.
    pub fn param(&mut self, p: &Param) -> Var {
        if let Some(&v) = self.params.get(p.name()) {
            return v;
        }
        let v = self.push(p.value.clone(), Op::Leaf);
        self.params.insert(p.name().to_owned(), v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul_t(self.value(b))?;
        Ok(self.push(value, Op::MatMulT(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).sub(self.value(b))?;
        Ok(self.push(value, Op::Sub(a, b)))
    }

    /// Adds a 1 x cols bias row to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let value = self.value(a).add_row(self.value(bias))?;
        Ok(self.push(value, Op::AddRow(a, bias)))
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).hadamard(self.value(b))?;
        Ok(self.push(value, Op::Hadamard(a, b)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).scale(s);
        self.push(value, Op::Scale(a, s))
    }

    /// Elementwise product with a constant mask (dropout).
    pub fn mul_const(&mut self, a: Var, mask: Matrix) -> Result<Var> {
        let value = self.value(a).hadamard(&mask)?;
        Ok(self.push(value, Op::MulConst(a, mask)))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let value = self.value(a).map(|v| if v > 0.0 { v } else { slope * v });
        self.push(value, Op::LeakyRelu(a, slope))
    }

    pub fn softmax_rows(&mut self, a: Var, temperature: f64) -> Result<Var> {
        let value = self.value(a).softmax_rows(temperature)?;
        Ok(self.push(value, Op::SoftmaxRows(a, temperature)))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).concat_cols(self.value(b))?;
        Ok(self.push(value, Op::ConcatCols(a, b)))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let value = self.value(a).slice_cols(start, end)?;
        Ok(self.push(value, Op::SliceCols(a, start)))
    }

    pub fn concat_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.cols() != vb.cols() {
            return Err(Error::Dimension {
                op: "concat_rows",
                left: va.shape(),
                right: vb.shape(),
            });
        }
        let value = va.vstack(vb)?;
        Ok(self.push(value, Op::ConcatRows(a, b)))
    }

    /// Rows `start..end` of `a`.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let va = self.value(a);
        if start > end || end > va.rows() {
            return Err(Error::Index {
                index: end,
                len: va.rows(),
            });
        }
        let cols = va.cols();
        let value = Matrix::new(end - start, cols, va.as_slice()[start * cols..end * cols].to_vec())?;
        Ok(self.push(value, Op::SliceRows(a, start)))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::exp);
        self.push(value, Op::Exp(a))
    }

    /// Clamps into `[lo, hi]`; the gradient is zero where the clamp is active.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let value = self.value(a).map(|v| v.clamp(lo, hi));
        self.push(value, Op::Clamp(a, lo, hi))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Matrix::scalar(self.value(a).sum());
        self.push(value, Op::Sum(a))
    }

    /// Multi-bandwidth Gaussian-kernel MMD² with population normalization.
    pub fn mmd(&mut self, x: Var, y: Var, bandwidths: &[f64]) -> Result<Var> {
        let (loss, grad_x, grad_y) = mmd_with_grad(self.value(x), self.value(y), bandwidths)?;
        Ok(self.push(
            Matrix::scalar(loss),
            Op::Mmd {
                x,
                y,
                grad_x,
                grad_y,
            },
        ))
    }

    /// Mean negative log-likelihood of `labels` under row-wise softmax of `logits`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let l = self.value(logits);
        if l.rows() != labels.len() {
            return Err(Error::Dimension {
                op: "cross_entropy",
                left: l.shape(),
                right: (labels.len(), 1),
            });
        }
        if l.rows() == 0 {
            return Err(Error::param("cross_entropy over an empty batch"));
        }
        let classes = l.cols();
        if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
            return Err(Error::Index {
                index: bad,
                len: classes,
            });
        }
        let mut probs = l.clone();
        let mut total = 0.0;
        for (r, &y) in labels.iter().enumerate() {
            let row = probs.row_mut(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            total += lse - row[y];
            softmax_in_place(row, 1.0);
        }
        let loss = total / labels.len() as f64;
        Ok(self.push(
            Matrix::scalar(loss),
            Op::CrossEntropy {
                logits,
                probs,
                labels: labels.to_vec(),
            },
        ))
    }

    /// `mean_batch( ½ Σ_dims (μ² + e^logvar − logvar − 1) )`.
    pub fn kl_std_normal(&mut self, mu: Var, logvar: Var) -> Result<Var> {
        let (m, lv) = (self.value(mu), self.value(logvar));
        m.same_shape(lv, "kl_std_normal")?;
        let n = m.rows().max(1) as f64;
        let total: f64 = m
            .as_slice()
            .iter()
            .zip(lv.as_slice())
            .map(|(&u, &l)| 0.5 * (u * u + l.exp() - l - 1.0))
            .sum();
        Ok(self.push(Matrix::scalar(total / n), Op::KlStdNormal { mu, logvar }))
    }

    /// Mean absolute error over every entry.
    pub fn l1_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        let (p, t) = (self.value(pred), self.value(target));
        p.same_shape(t, "l1_loss")?;
        let loss = p
            .as_slice()
            .iter()
            .zip(t.as_slice())
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / p.len().max(1) as f64;
        Ok(self.push(Matrix::scalar(loss), Op::L1 { pred, target }))
    }

    /// Pairwise cosine similarity of the rows of `x`. Rows with norm below
    /// `min_norm` are rejected.
    pub fn cosine_rows(&mut self, x: Var, min_norm: f64) -> Result<Var> {
        let xv = self.value(x);
        let mut normalized = xv.clone();
        let mut norms = Vec::with_capacity(xv.rows());
        for r in 0..xv.rows() {
            let row = normalized.row_mut(r);
            let norm = dot(row, row).sqrt();
            if !(norm >= min_norm) || norm == 0.0 {
                return Err(Error::Degenerate(format!(
                    "row {r} has norm {norm:e}, below the cosine floor {min_norm:e}"
                )));
            }
            row.iter_mut().for_each(|v| *v /= norm);
            norms.push(norm);
        }
        let mut sim = normalized.matmul_t(&normalized)?;
        for i in 0..sim.rows() {
            sim.set(i, i, 1.0);
            for j in 0..sim.cols() {
                let v = sim.get(i, j).clamp(-1.0, 1.0);
                sim.set(i, j, v);
            }
        }
        Ok(self.push(
            sim,
            Op::CosineRows {
                x,
                normalized,
                norms,
            },
        ))
    }

    /// Relational KL between similarity distributions. For every anchor row
    /// with at least one eligible entry in `mask`, both `sim` (visual) and
    /// `target` (semantic, constant) are turned into distributions by a softmax
    /// at `temperature` over the eligible entries, and `KL(visual ‖ semantic)`
    /// is averaged over the anchors that were not skipped.
    pub fn relational_kl(
        &mut self,
        sim: Var,
        target: &Matrix,
        mask: &[bool],
        temperature: f64,
    ) -> Result<Var> {
        let (loss, grad) = relational_kl_with_grad(self.value(sim), target, mask, temperature)?;
        Ok(self.push(Matrix::scalar(loss), Op::RelationalKl { sim, grad }))
    }

    /// Propagates adjoints from the scalar `loss` back to every node.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.shape(loss) != (1, 1) {
            return Err(Error::Dimension {
                op: "backward",
                left: self.shape(loss),
                right: (1, 1),
            });
        }
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if matches!(node.op, Op::Leaf) {
                grads[idx] = Some(g);
                continue;
            }
            let mut send = |v: Var, delta: Matrix| {
                match &mut grads[v.0] {
                    Some(acc) => {
                        for (a, b) in acc.as_mut_slice().iter_mut().zip(delta.as_slice()) {
                            *a += b;
                        }
                    }
                    slot @ None => *slot = Some(delta),
                }
            };
            let val = |v: Var| &self.nodes[v.0].value;
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::MatMul(a, b) => {
                    send(*a, g.matmul_t(val(*b))?);
                    send(*b, val(*a).t_matmul(&g)?);
                }
                Op::MatMulT(a, b) => {
                    // out = a bᵀ  =>  da = g b,  db = gᵀ a
                    send(*a, g.matmul(val(*b))?);
                    send(*b, g.t_matmul(val(*a))?);
                }
                Op::Add(a, b) => {
                    send(*a, g.clone());
                    send(*b, g);
                }
                Op::Sub(a, b) => {
                    send(*a, g.clone());
                    send(*b, g.scale(-1.0));
                }
                Op::AddRow(a, bias) => {
                    send(*bias, g.sum_rows());
                    send(*a, g);
                }
                Op::Hadamard(a, b) => {
                    send(*a, g.hadamard(val(*b))?);
                    send(*b, g.hadamard(val(*a))?);
                }
                Op::Scale(a, s) => send(*a, g.scale(*s)),
                Op::MulConst(a, mask) => send(*a, g.hadamard(mask)?),
                Op::LeakyRelu(a, slope) => {
                    let d = val(*a).zip_map(&g, "leaky_relu", |x, g| if x > 0.0 { g } else { slope * g })?;
                    send(*a, d);
                }
                Op::SoftmaxRows(a, t) => {
                    // dz = s ⊙ (g − Σ g⊙s) / t, row-wise
                    let s = &node.value;
                    let mut d = Matrix::zeros(s.rows(), s.cols());
                    for r in 0..s.rows() {
                        let (sr, gr) = (s.row(r), g.row(r));
                        let inner = dot(sr, gr);
                        for ((o, &si), &gi) in d.row_mut(r).iter_mut().zip(sr).zip(gr) {
                            *o = si * (gi - inner) / t;
                        }
                    }
                    send(*a, d);
                }
                Op::ConcatCols(a, b) => {
                    let split = val(*a).cols();
                    send(*a, g.slice_cols(0, split)?);
                    send(*b, g.slice_cols(split, g.cols())?);
                }
                Op::SliceCols(a, start) => {
                    let (rows, cols) = val(*a).shape();
                    let mut d = Matrix::zeros(rows, cols);
                    for r in 0..rows {
                        d.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                    }
                    send(*a, d);
                }
                Op::ConcatRows(a, b) => {
                    let (split, cols) = val(*a).shape();
                    let data = g.as_slice();
                    send(*a, Matrix::new(split, cols, data[..split * cols].to_vec())?);
                    send(*b, Matrix::new(g.rows() - split, cols, data[split * cols..].to_vec())?);
                }
                Op::SliceRows(a, start) => {
                    let (rows, cols) = val(*a).shape();
                    let mut d = Matrix::zeros(rows, cols);
                    d.as_mut_slice()[start * cols..(start + g.rows()) * cols].copy_from_slice(g.as_slice());
                    send(*a, d);
                }
                Op::Exp(a) => send(*a, node.value.hadamard(&g)?),
                Op::Clamp(a, lo, hi) => {
                    let d = val(*a).zip_map(&g, "clamp", |x, g| if x < *lo || x > *hi { 0.0 } else { g })?;
                    send(*a, d);
                }
                Op::Sum(a) => {
                    let (r, c) = val(*a).shape();
                    send(*a, Matrix::filled(r, c, g.item()));
                }
                Op::Mmd {
                    x,
                    y,
                    grad_x,
                    grad_y,
                } => {
                    send(*x, grad_x.scale(g.item()));
                    send(*y, grad_y.scale(g.item()));
                }
                Op::CrossEntropy {
                    logits,
                    probs,
                    labels,
                } => {
                    let scale = g.item() / labels.len() as f64;
                    let mut d = probs.clone();
                    for (r, &y) in labels.iter().enumerate() {
                        let row = d.row_mut(r);
                        row[y] -= 1.0;
                        row.iter_mut().for_each(|v| *v *= scale);
                    }
                    send(*logits, d);
                }
                Op::KlStdNormal { mu, logvar } => {
                    let m = val(*mu);
                    let scale = g.item() / m.rows().max(1) as f64;
                    send(*mu, m.scale(scale));
                    send(*logvar, val(*logvar).map(|l| 0.5 * (l.exp() - 1.0) * scale));
                }
                Op::L1 { pred, target } => {
                    let (p, t) = (val(*pred), val(*target));
                    let scale = g.item() / p.len().max(1) as f64;
                    let d = p.zip_map(t, "l1_loss", |a, b| {
                        if a > b {
                            scale
                        } else if a < b {
                            -scale
                        } else {
                            0.0
                        }
                    })?;
                    send(*target, d.scale(-1.0));
                    send(*pred, d);
                }
                Op::CosineRows {
                    x,
                    normalized,
                    norms,
                } => {
                    // S = N Nᵀ  =>  dN = (G + Gᵀ) N ; then project out the radial part.
                    let sym = g.add(&g.transpose())?;
                    let dn = sym.matmul(normalized)?;
                    let mut dx = Matrix::zeros(dn.rows(), dn.cols());
                    for r in 0..dn.rows() {
                        let (nr, dr) = (normalized.row(r), dn.row(r));
                        let radial = dot(nr, dr);
                        for ((o, &ni), &di) in dx.row_mut(r).iter_mut().zip(nr).zip(dr) {
                            *o = (di - ni * radial) / norms[r];
                        }
                    }
                    send(*x, dx);
                }
                Op::RelationalKl { sim, grad } => send(*sim, grad.scale(g.item())),
            }
        }
        self.grads = grads;
        Ok(())
    }

    /// Gradient of the last backward pass with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Adds the gradients of bound parameters into `params`, matched by name.
    /// Parameters that were not bound, or received no gradient, are left alone.
    pub fn accumulate_into<'a>(&self, params: impl IntoIterator<Item = &'a mut Param>) {
        for p in params {
            if let Some(&v) = self.params.get(p.name()) {
                match self.grad(v) {
                    Some(g) => p.accumulate(g),
                    None => p.accumulate(&Matrix::zeros(p.value.rows(), p.value.cols())),
                }
            }
        }
    }
}

/// Loss and gradients of the normalized multi-bandwidth MMD².
pub(crate) fn mmd_with_grad(x: &Matrix, y: &Matrix, bandwidths: &[f64]) -> Result<(f64, Matrix, Matrix)> {
    if x.cols() != y.cols() {
        return Err(Error::Dimension {
            op: "mmd",
            left: x.shape(),
            right: y.shape(),
        });
    }
    if x.rows() == 0 || y.rows() == 0 {
        return Err(Error::param("mmd needs at least one sample on each side"));
    }
    if bandwidths.is_empty() {
        return Err(Error::param("mmd needs at least one bandwidth"));
    }
    if let Some(s) = bandwidths.iter().find(|s| !(**s > 0.0)) {
        return Err(Error::param(format!("kernel bandwidth must be positive, got {s}")));
    }
    let (n, m, d) = (x.rows(), y.rows(), x.cols());
    let inv_two_var: Vec<f64> = bandwidths.iter().map(|s| 1.0 / (2.0 * s * s)).collect();

    let mut grad_x = Matrix::zeros(n, d);
    let mut grad_y = Matrix::zeros(m, d);
    let mut loss = 0.0;

    // Accumulates weight * Σσ k(a,b) and the matching gradient contributions.
    // dk/da = −k (a − b) / σ² = −2 k (a − b) * inv_two_var
    let pair = |a: &[f64], b: &[f64], weight: f64| -> (f64, f64) {
        let sq: f64 = a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum();
        let mut kval = 0.0;
        let mut dcoef = 0.0;
        for &c in &inv_two_var {
            let k = (-sq * c).exp();
            kval += k;
            dcoef += -2.0 * k * c;
        }
        (weight * kval, weight * dcoef)
    };

    let wxx = 1.0 / (n * n) as f64;
    for i in 0..n {
        for j in (i + 1)..n {
            // counted twice: (i, j) and (j, i)
            let (contrib, coef) = pair(x.row(i), x.row(j), 2.0 * wxx);
            loss += contrib;
            for c in 0..d {
                let diff = x.get(i, c) - x.get(j, c);
                grad_x.row_mut(i)[c] += coef * diff;
                grad_x.row_mut(j)[c] -= coef * diff;
            }
        }
    }
    loss += wxx * n as f64 * bandwidths.len() as f64;

    let wyy = 1.0 / (m * m) as f64;
    for i in 0..m {
        for j in (i + 1)..m {
            let (contrib, coef) = pair(y.row(i), y.row(j), 2.0 * wyy);
            loss += contrib;
            for c in 0..d {
                let diff = y.get(i, c) - y.get(j, c);
                grad_y.row_mut(i)[c] += coef * diff;
                grad_y.row_mut(j)[c] -= coef * diff;
            }
        }
    }
    loss += wyy * m as f64 * bandwidths.len() as f64;

    let wxy = -2.0 / (n * m) as f64;
    for i in 0..n {
        for j in 0..m {
            let (contrib, coef) = pair(x.row(i), y.row(j), wxy);
            loss += contrib;
            for c in 0..d {
                let diff = x.get(i, c) - y.get(j, c);
                grad_x.row_mut(i)[c] += coef * diff;
                grad_y.row_mut(j)[c] -= coef * diff;
            }
        }
    }
    Ok((loss, grad_x, grad_y))
}

pub(crate) fn relational_kl_with_grad(
    sim: &Matrix,
    target: &Matrix,
    mask: &[bool],
    temperature: f64,
) -> Result<(f64, Matrix)> {
    let n = sim.rows();
    if sim.cols() != n || target.shape() != (n, n) || mask.len() != n * n {
        return Err(Error::Dimension {
            op: "relational_kl",
            left: sim.shape(),
            right: target.shape(),
        });
    }
    if !(temperature > 0.0) {
        return Err(Error::param(format!("temperature must be positive, got {temperature}")));
    }
    let mut grad = Matrix::zeros(n, n);
    let mut total = 0.0;
    let mut anchors = 0usize;
    let mut cols = Vec::with_capacity(n);
    let mut p = Vec::with_capacity(n);
    let mut q = Vec::with_capacity(n);
    for i in 0..n {
        cols.clear();
        cols.extend((0..n).filter(|&j| j != i && mask[i * n + j]));
        if cols.is_empty() {
            continue;
        }
        p.clear();
        q.clear();
        p.extend(cols.iter().map(|&j| sim.get(i, j)));
        q.extend(cols.iter().map(|&j| target.get(i, j)));
        softmax_in_place(&mut p, temperature);
        softmax_in_place(&mut q, temperature);
        let mut kl = 0.0;
        for (&pi, &qi) in p.iter().zip(&q) {
            if pi > 0.0 {
                kl += pi * (pi.ln() - qi.ln());
            }
        }
        total += kl;
        anchors += 1;
        for (k, &j) in cols.iter().enumerate() {
            let pk = p[k];
            let log_ratio = if pk > 0.0 { pk.ln() - q[k].ln() } else { 0.0 };
            grad.set(i, j, pk * (log_ratio - kl) / temperature);
        }
    }
    if anchors == 0 {
        return Err(Error::Degenerate(
            "no anchor has an eligible pair under the alignment mask".into(),
        ));
    }
    let inv = 1.0 / anchors as f64;
    Ok((total * inv, grad.scale(inv)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gradcheck::finite_difference;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn check_unary(build: impl Fn(&mut Graph, Var) -> Result<Var>, input: Matrix, tol: f64) {
        let f = |m: &Matrix| {
            let mut g = Graph::new();
            let x = g.constant(m.clone());
            let out = build(&mut g, x).unwrap();
            g.scalar(out)
        };
        let mut g = Graph::new();
        let x = g.constant(input.clone());
        let out = build(&mut g, x).unwrap();
        g.backward(out).unwrap();
        let analytic = g.grad(x).cloned().unwrap_or_else(|| Matrix::zeros(input.rows(), input.cols()));
        let numeric = finite_difference(&f, &input, 1e-5);
        for (a, n) in analytic.as_slice().iter().zip(numeric.as_slice()) {
            let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-6);
            assert!(rel < tol, "analytic {a} vs numeric {n}");
        }
    }

    fn rand(rows: usize, cols: usize, seed: u64) -> Matrix {
        Matrix::randn(rows, cols, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    /// Reduces a matrix-valued node to a scalar with fixed random weights so
    /// every output entry contributes a distinct adjoint.
    fn weighted_sum(g: &mut Graph, v: Var, seed: u64) -> Result<Var> {
        let (r, c) = g.shape(v);
        let w = g.constant(rand(r, c, seed));
        let prod = g.hadamard(v, w)?;
        Ok(g.sum(prod))
    }

    #[test]
    fn every_op_backward_matches_finite_differences() {
        let b = rand(4, 3, 11);
        let bias = rand(1, 4, 12);
        let other = rand(5, 4, 13);
        let mask = rand(5, 4, 14).map(|v| if v > 0.0 { 2.0 } else { 0.0 });
        let ops: Vec<(&str, Box<dyn Fn(&mut Graph, Var) -> Result<Var>>)> = vec![
            ("matmul", Box::new(|g, x| {
                let b = g.constant(b.clone());
                let y = g.matmul(x, b)?;
                weighted_sum(g, y, 1)
            })),
            ("matmul_t", Box::new(|g, x| {
                let o = g.constant(other.clone());
                let y = g.matmul_t(o, x)?;
                weighted_sum(g, y, 2)
            })),
            ("self matmul_t", Box::new(|g, x| {
                let y = g.matmul_t(x, x)?;
                weighted_sum(g, y, 3)
            })),
            ("add_row", Box::new(|g, x| {
                let c = g.constant(bias.clone());
                let y = g.add_row(x, c)?;
                let y = g.hadamard(y, x)?;
                weighted_sum(g, y, 4)
            })),
            ("sub/scale", Box::new(|g, x| {
                let o = g.constant(other.clone());
                let y = g.sub(o, x)?;
                let y = g.scale(y, -1.7);
                let y = g.hadamard(y, y)?;
                weighted_sum(g, y, 5)
            })),
            ("mul_const", Box::new(|g, x| {
                let y = g.mul_const(x, mask.clone())?;
                weighted_sum(g, y, 6)
            })),
            ("leaky_relu", Box::new(|g, x| {
                let y = g.leaky_relu(x, 0.2);
                weighted_sum(g, y, 7)
            })),
            ("softmax", Box::new(|g, x| {
                let y = g.softmax_rows(x, 0.3)?;
                weighted_sum(g, y, 8)
            })),
            ("concat/slice", Box::new(|g, x| {
                let o = g.constant(other.clone());
                let y = g.concat_cols(o, x)?;
                let y = g.slice_cols(y, 2, 7)?;
                weighted_sum(g, y, 9)
            })),
            ("concat/slice rows", Box::new(|g, x| {
                let o = g.constant(other.clone());
                let y = g.concat_rows(x, o)?;
                let y = g.slice_rows(y, 3, 8)?;
                let z = g.slice_rows(x, 1, 4)?;
                let y = g.concat_rows(y, z)?;
                weighted_sum(g, y, 17)
            })),
            ("exp/clamp", Box::new(|g, x| {
                let y = g.clamp(x, -0.5, 0.8);
                let y = g.exp(y);
                weighted_sum(g, y, 10)
            })),
            ("cross_entropy", Box::new(|g, x| g.cross_entropy(x, &[0, 3, 1, 2, 3]))),
            ("kl", Box::new(|g, x| {
                let lv = g.scale(x, 0.5);
                g.kl_std_normal(x, lv)
            })),
            ("l1", Box::new(|g, x| {
                let o = g.constant(other.clone());
                g.l1_loss(x, o)
            })),
            ("mmd", Box::new(|g, x| {
                let o = g.constant(other.clone());
                g.mmd(o, x, &[0.7, 2.0])
            })),
            ("mmd self", Box::new(|g, x| {
                let half = g.scale(x, 0.5);
                g.mmd(x, half, &[1.0])
            })),
            ("cosine", Box::new(|g, x| {
                let y = g.cosine_rows(x, 1e-8)?;
                weighted_sum(g, y, 15)
            })),
            ("relational_kl", Box::new(|g, x| {
                let s = g.cosine_rows(x, 1e-8)?;
                let target = rand(5, 5, 16);
                let mask: Vec<bool> = (0..25).map(|i| i % 3 != 0).collect();
                g.relational_kl(s, &target, &mask, 0.5)
            })),
        ];
        for (name, op) in ops {
            let input = rand(5, 4, 99);
            eprintln!("checking {name}");
            check_unary(op, input, 1e-4);
        }
    }

    #[test]
    fn relational_kl_skips_anchors_without_pairs() {
        let sim = Matrix::identity(3);
        let mask = vec![false; 9];
        assert!(matches!(
            relational_kl_with_grad(&sim, &sim, &mask, 0.1),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn parameter_gradients_flow_by_name() {
        let mut w = Param::new("w", rand(4, 2, 1));
        let x = rand(3, 4, 2);
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let wv = g.param(&w);
        assert_eq!(g.param(&w), wv);
        let y = g.matmul(xv, wv).unwrap();
        let loss = g.sum(y);
        g.backward(loss).unwrap();
        g.accumulate_into([&mut w]);
        // d/dW Σ XW = Xᵀ 1
        let expected = x.t_matmul(&Matrix::filled(3, 2, 1.0)).unwrap();
        assert!(w.grad().unwrap().max_abs_diff(&expected) < 1e-12);
    }
}
