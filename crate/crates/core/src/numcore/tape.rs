use std::sync::Arc;

use rand::Rng;

use super::kernels::{self, bce_with_logits, sigmoid};
use super::Tensor;
use crate::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Sparse row-major matrix, used for neighbourhood aggregation.
#[derive(Clone, Debug, PartialEq)]
pub struct Csr {
    pub rows: usize,
    pub cols: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<usize>,
    pub weights: Vec<f64>,
}

impl Csr {
    /// Builds a CSR matrix from per-row `(column, weight)` lists.
    pub fn from_rows(cols: usize, rows: &[Vec<(usize, f64)>]) -> Self {
        let mut indptr = Vec::with_capacity(rows.len() + 1);
        let mut indices = Vec::new();
        let mut weights = Vec::new();
        indptr.push(0);
        for row in rows {
            for &(c, w) in row {
                assert!(c < cols, "column {c} out of range");
                indices.push(c);
                weights.push(w);
            }
            indptr.push(indices.len());
        }
        Self {
            rows: rows.len(),
            cols,
            indptr,
            indices,
            weights,
        }
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.indptr[r]..self.indptr[r + 1];
        self.indices[span.clone()]
            .iter()
            .copied()
            .zip(self.weights[span].iter().copied())
    }
}

/// Elementwise function with a user-supplied derivative.
///
/// `df(x, y)` receives the input and the forward output.
#[derive(Clone, Copy)]
pub struct MapFn {
    pub name: &'static str,
    pub f: fn(f64) -> f64,
    pub df: fn(f64, f64) -> f64,
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    ConcatCols(Var, Var),
    SliceCols(Var, usize),
    Relu(Var),
    Sigmoid(Var),
    Softmax(Var),
    MaskedSoftmax(Var),
    MaskedMean(Var, Vec<bool>, usize),
    Dropout(Var, Vec<f64>),
    GatherRows(Var, Vec<usize>),
    Aggregate(Var, Arc<Csr>),
    Sum(Var),
    BceLogits(Var, Vec<f64>),
    Map(Var, MapFn),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records operations during a forward pass so gradients can be propagated
/// back from a scalar loss.
///
/// A tape is single-use: build it, run [`Tape::backward`], read gradients.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by a backward pass, indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.grads.get_mut(var.0).and_then(Option::take)
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

    pub fn shape(&self, var: Var) -> (usize, usize) {
        self.nodes[var.0].value.shape()
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    /// Records a leaf. Gradients are only tracked for leaves that ask for them.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn variable(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    fn push(&mut self, op_name: &str, value: Tensor, op: Op, parents: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(op_name.to_string()));
        }
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.shape(a);
        let (k2, n) = self.shape(b);
        if k != k2 {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                left: (m, k),
                right: (k2, n),
            });
        }
        let out = kernels::mm(self.value(a).data(), self.value(b).data(), m, k, n);
        self.push("matmul", Tensor::from_parts(m, n, out), Op::MatMul(a, b), &[a, b])
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.shape(a);
        let (n, k2) = self.shape(b);
        if k != k2 {
            return Err(Error::ShapeMismatch {
                op: "matmul_nt",
                left: (m, k),
                right: (n, k2),
            });
        }
        let out = kernels::mm_nt(self.value(a).data(), self.value(b).data(), m, k, n);
        self.push(
            "matmul_nt",
            Tensor::from_parts(m, n, out),
            Op::MatMulNt(a, b),
            &[a, b],
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::ShapeMismatch {
                op: "add",
                left: sa,
                right: sb,
            });
        }
        let out: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        self.push("add", Tensor::from_parts(sa.0, sa.1, out), Op::Add(a, b), &[a, b])
    }

    /// Adds the `1 × n` row `bias` to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (m, n) = self.shape(a);
        let sb = self.shape(bias);
        if sb != (1, n) {
            return Err(Error::ShapeMismatch {
                op: "add_row",
                left: (m, n),
                right: sb,
            });
        }
        let b = self.value(bias).data();
        let mut out = self.value(a).data().to_vec();
        for row in out.chunks_mut(n) {
            for (x, y) in row.iter_mut().zip(b) {
                *x += y;
            }
        }
        self.push(
            "add_row",
            Tensor::from_parts(m, n, out),
            Op::AddRow(a, bias),
            &[a, bias],
        )
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let (m, n) = self.shape(a);
        let out = self.value(a).data().iter().map(|x| x * factor).collect();
        self.push("scale", Tensor::from_parts(m, n, out), Op::Scale(a, factor), &[a])
    }

    /// Column-wise concatenation `[a | b]`.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ma, na) = self.shape(a);
        let (mb, nb) = self.shape(b);
        if ma != mb {
            return Err(Error::ShapeMismatch {
                op: "concat",
                left: (ma, na),
                right: (mb, nb),
            });
        }
        let mut out = Vec::with_capacity(ma * (na + nb));
        for r in 0..ma {
            out.extend_from_slice(self.value(a).row(r));
            out.extend_from_slice(self.value(b).row(r));
        }
        self.push(
            "concat",
            Tensor::from_parts(ma, na + nb, out),
            Op::ConcatCols(a, b),
            &[a, b],
        )
    }

    /// Columns `start..start + len` of `a`.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.shape(a);
        if len == 0 || start + len > n {
            return Err(Error::ShapeMismatch {
                op: "slice_cols",
                left: (m, n),
                right: (start, len),
            });
        }
        let mut out = Vec::with_capacity(m * len);
        for r in 0..m {
            out.extend_from_slice(&self.value(a).row(r)[start..start + len]);
        }
        self.push(
            "slice_cols",
            Tensor::from_parts(m, len, out),
            Op::SliceCols(a, start),
            &[a],
        )
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.shape(a);
        let out = self.value(a).data().iter().map(|&x| x.max(0.0)).collect();
        self.push("relu", Tensor::from_parts(m, n, out), Op::Relu(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.shape(a);
        let out = self.value(a).data().iter().map(|&x| sigmoid(x)).collect();
        self.push("sigmoid", Tensor::from_parts(m, n, out), Op::Sigmoid(a), &[a])
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.shape(a);
        let mut out = self.value(a).data().to_vec();
        for row in out.chunks_mut(n) {
            softmax_row(row, None);
        }
        self.push("softmax", Tensor::from_parts(m, n, out), Op::Softmax(a), &[a])
    }

    /// Row-wise softmax restricted to entries where `mask` is true.
    ///
    /// Masked entries are exactly zero. A row with no allowed entry is all
    /// zeros.
    pub fn masked_softmax(&mut self, a: Var, mask: &[bool]) -> Result<Var> {
        let (m, n) = self.shape(a);
        if mask.len() != m * n {
            return Err(Error::ShapeMismatch {
                op: "masked_softmax",
                left: (m, n),
                right: (mask.len(), 1),
            });
        }
        let mut out = self.value(a).data().to_vec();
        for (row, row_mask) in out.chunks_mut(n).zip(mask.chunks(n)) {
            softmax_row(row, Some(row_mask));
        }
        self.push(
            "masked_softmax",
            Tensor::from_parts(m, n, out),
            Op::MaskedSoftmax(a),
            &[a],
        )
    }

    /// Mean of the rows of `a` selected by `mask`, as a `1 × n` row.
    pub fn masked_mean(&mut self, a: Var, mask: &[bool]) -> Result<Var> {
        let (m, n) = self.shape(a);
        if mask.len() != m {
            return Err(Error::ShapeMismatch {
                op: "masked_mean",
                left: (m, n),
                right: (mask.len(), 1),
            });
        }
        let count = mask.iter().filter(|&&k| k).count();
        if count == 0 {
            return Err(Error::NoValidPositions("masked_mean"));
        }
        let mut out = vec![0.0; n];
        for (r, _) in mask.iter().enumerate().filter(|(_, &k)| k) {
            for (o, x) in out.iter_mut().zip(self.value(a).row(r)) {
                *o += x;
            }
        }
        let inv = 1.0 / count as f64;
        out.iter_mut().for_each(|o| *o *= inv);
        self.push(
            "masked_mean",
            Tensor::from_parts(1, n, out),
            Op::MaskedMean(a, mask.to_vec(), count),
            &[a],
        )
    }

    /// Inverted dropout. Identity when not training or when `p == 0`.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        a: Var,
        p: f64,
        rng: &mut R,
        training: bool,
    ) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Config(format!("dropout rate {p} outside [0, 1)")));
        }
        if !training || p == 0.0 {
            return Ok(a);
        }
        let (m, n) = self.shape(a);
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..m * n)
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        let out = self
            .value(a)
            .data()
            .iter()
            .zip(&mask)
            .map(|(x, k)| x * k)
            .collect();
        self.push(
            "dropout",
            Tensor::from_parts(m, n, out),
            Op::Dropout(a, mask),
            &[a],
        )
    }

    /// Row lookup: output row `i` is row `indices[i]` of `a`.
    pub fn gather_rows(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let (m, n) = self.shape(a);
        if indices.is_empty() {
            return Err(Error::NoValidPositions("gather_rows"));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= m) {
            return Err(Error::ShapeMismatch {
                op: "gather_rows",
                left: (m, n),
                right: (bad, 0),
            });
        }
        let mut out = Vec::with_capacity(indices.len() * n);
        for &i in indices {
            out.extend_from_slice(self.value(a).row(i));
        }
        self.push(
            "gather_rows",
            Tensor::from_parts(indices.len(), n, out),
            Op::GatherRows(a, indices.to_vec()),
            &[a],
        )
    }

    /// Sparse aggregation `adj · a`.
    pub fn aggregate(&mut self, adj: &Arc<Csr>, a: Var) -> Result<Var> {
        let (m, n) = self.shape(a);
        if adj.cols != m {
            return Err(Error::ShapeMismatch {
                op: "aggregate",
                left: (adj.rows, adj.cols),
                right: (m, n),
            });
        }
        let mut out = vec![0.0; adj.rows * n];
        let x = self.value(a);
        for r in 0..adj.rows {
            let o = &mut out[r * n..(r + 1) * n];
            for (c, w) in adj.row(r) {
                for (oi, xi) in o.iter_mut().zip(x.row(c)) {
                    *oi += w * xi;
                }
            }
        }
        self.push(
            "aggregate",
            Tensor::from_parts(adj.rows, n, out),
            Op::Aggregate(a, Arc::clone(adj)),
            &[a],
        )
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let total = self.value(a).data().iter().sum();
        self.push("sum", Tensor::scalar(total), Op::Sum(a), &[a])
    }

    /// Sum over elements of the stable binary cross-entropy between
    /// `sigmoid(logits)` and `labels`.
    pub fn bce_with_logits(&mut self, logits: Var, labels: &[f64]) -> Result<Var> {
        let shape = self.shape(logits);
        if labels.len() != shape.0 * shape.1 {
            return Err(Error::ShapeMismatch {
                op: "bce_with_logits",
                left: shape,
                right: (labels.len(), 1),
            });
        }
        let total = self
            .value(logits)
            .data()
            .iter()
            .zip(labels)
            .map(|(&z, &y)| bce_with_logits(z, y))
            .sum();
        self.push(
            "bce_with_logits",
            Tensor::scalar(total),
            Op::BceLogits(logits, labels.to_vec()),
            &[logits],
        )
    }

    pub fn map(&mut self, a: Var, f: MapFn) -> Result<Var> {
        let (m, n) = self.shape(a);
        let out = self.value(a).data().iter().map(|&x| (f.f)(x)).collect();
        self.push(f.name, Tensor::from_parts(m, n, out), Op::Map(a, f), &[a])
    }

    /// Back-propagates from a scalar loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let shape = self.shape(loss);
        if shape != (1, 1) {
            return Err(Error::NonScalarLoss(shape));
        }
        self.backward_with_seed(loss, Tensor::scalar(1.0))
    }

    /// Back-propagates an upstream gradient `seed` flowing into `output`.
    pub fn backward_with_seed(&self, output: Var, seed: Tensor) -> Result<Gradients> {
        let shape = self.shape(output);
        if seed.shape() != shape {
            return Err(Error::ShapeMismatch {
                op: "backward",
                left: shape,
                right: seed.shape(),
            });
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(seed);
        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.backprop_node(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let (m, n) = node.value.shape();
        let y = node.value.data();
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let k = av.cols();
                if self.requires_grad(*a) {
                    let da = kernels::mm_nt(gd, bv.data(), m, n, k);
                    accumulate(grads, *a, Tensor::from_parts(m, k, da));
                }
                if self.requires_grad(*b) {
                    let db = kernels::mm_tn(av.data(), gd, m, k, n);
                    accumulate(grads, *b, Tensor::from_parts(k, n, db));
                }
            }
            Op::MatMulNt(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let k = av.cols();
                if self.requires_grad(*a) {
                    let da = kernels::mm(gd, bv.data(), m, n, k);
                    accumulate(grads, *a, Tensor::from_parts(m, k, da));
                }
                if self.requires_grad(*b) {
                    let db = kernels::mm_tn(gd, av.data(), m, n, k);
                    accumulate(grads, *b, Tensor::from_parts(n, k, db));
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if self.requires_grad(v) {
                        accumulate(grads, v, g.clone());
                    }
                }
            }
            Op::AddRow(a, bias) => {
                if self.requires_grad(*a) {
                    accumulate(grads, *a, g.clone());
                }
                if self.requires_grad(*bias) {
                    let mut db = vec![0.0; n];
                    for row in gd.chunks(n) {
                        for (d, x) in db.iter_mut().zip(row) {
                            *d += x;
                        }
                    }
                    accumulate(grads, *bias, Tensor::from_parts(1, n, db));
                }
            }
            Op::Scale(a, factor) => {
                let da = gd.iter().map(|x| x * factor).collect();
                accumulate(grads, *a, Tensor::from_parts(m, n, da));
            }
            Op::ConcatCols(a, b) => {
                let na = self.value(*a).cols();
                let nb = n - na;
                if self.requires_grad(*a) {
                    let mut da = Vec::with_capacity(m * na);
                    for row in gd.chunks(n) {
                        da.extend_from_slice(&row[..na]);
                    }
                    accumulate(grads, *a, Tensor::from_parts(m, na, da));
                }
                if self.requires_grad(*b) {
                    let mut db = Vec::with_capacity(m * nb);
                    for row in gd.chunks(n) {
                        db.extend_from_slice(&row[na..]);
                    }
                    accumulate(grads, *b, Tensor::from_parts(m, nb, db));
                }
            }
            Op::SliceCols(a, start) => {
                let full = self.value(*a).cols();
                let mut da = vec![0.0; m * full];
                for (r, row) in gd.chunks(n).enumerate() {
                    da[r * full + start..r * full + start + n].copy_from_slice(row);
                }
                accumulate(grads, *a, Tensor::from_parts(m, full, da));
            }
            Op::Relu(a) => {
                let x = self.value(*a).data();
                let da = gd
                    .iter()
                    .zip(x)
                    .map(|(gi, &xi)| if xi > 0.0 { *gi } else { 0.0 })
                    .collect();
                accumulate(grads, *a, Tensor::from_parts(m, n, da));
            }
            Op::Sigmoid(a) => {
                let da = gd
                    .iter()
                    .zip(y)
                    .map(|(gi, yi)| gi * yi * (1.0 - yi))
                    .collect();
                accumulate(grads, *a, Tensor::from_parts(m, n, da));
            }
            Op::Softmax(a) | Op::MaskedSoftmax(a) => {
                let mut da = vec![0.0; m * n];
                for ((drow, grow), yrow) in da.chunks_mut(n).zip(gd.chunks(n)).zip(y.chunks(n)) {
                    let inner = kernels::dot(grow, yrow);
                    for ((d, gi), yi) in drow.iter_mut().zip(grow).zip(yrow) {
                        *d = yi * (gi - inner);
                    }
                }
                accumulate(grads, *a, Tensor::from_parts(m, n, da));
            }
            Op::MaskedMean(a, mask, count) => {
                let rows = mask.len();
                let inv = 1.0 / *count as f64;
                let mut da = vec![0.0; rows * n];
                for (r, _) in mask.iter().enumerate().filter(|(_, &k)| k) {
                    for (d, gi) in da[r * n..(r + 1) * n].iter_mut().zip(gd) {
                        *d = gi * inv;
                    }
                }
                accumulate(grads, *a, Tensor::from_parts(rows, n, da));
            }
            Op::Dropout(a, mask) => {
                let da = gd.iter().zip(mask).map(|(gi, k)| gi * k).collect();
                accumulate(grads, *a, Tensor::from_parts(m, n, da));
            }
            Op::GatherRows(a, indices) => {
                let rows = self.value(*a).rows();
                let mut da = vec![0.0; rows * n];
                for (grow, &i) in gd.chunks(n).zip(indices) {
                    for (d, gi) in da[i * n..(i + 1) * n].iter_mut().zip(grow) {
                        *d += gi;
                    }
                }
                accumulate(grads, *a, Tensor::from_parts(rows, n, da));
            }
            Op::Aggregate(a, adj) => {
                let rows = self.value(*a).rows();
                let mut da = vec![0.0; rows * n];
                for r in 0..adj.rows {
                    let grow = &gd[r * n..(r + 1) * n];
                    for (c, w) in adj.row(r) {
                        for (d, gi) in da[c * n..(c + 1) * n].iter_mut().zip(grow) {
                            *d += w * gi;
                        }
                    }
                }
                accumulate(grads, *a, Tensor::from_parts(rows, n, da));
            }
            Op::Sum(a) => {
                let (ra, ca) = self.shape(*a);
                accumulate(grads, *a, Tensor::filled(ra, ca, gd[0]));
            }
            Op::BceLogits(a, labels) => {
                let (ra, ca) = self.shape(*a);
                let da = self
                    .value(*a)
                    .data()
                    .iter()
                    .zip(labels)
                    .map(|(&z, &t)| gd[0] * (sigmoid(z) - t))
                    .collect();
                accumulate(grads, *a, Tensor::from_parts(ra, ca, da));
            }
            Op::Map(a, f) => {
                let x = self.value(*a).data();
                let da = gd
                    .iter()
                    .zip(x.iter().zip(y))
                    .map(|(gi, (&xi, &yi))| gi * (f.df)(xi, yi))
                    .collect();
                accumulate(grads, *a, Tensor::from_parts(m, n, da));
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Tensor>], var: Var, delta: Tensor) {
    match &mut grads[var.0] {
        Some(existing) => existing.add_assign(&delta),
        slot @ None => *slot = Some(delta),
    }
}

fn softmax_row(row: &mut [f64], mask: Option<&[bool]>) {
    let allowed = |j: usize| mask.is_none_or(|m| m[j]);
    let max = row
        .iter()
        .enumerate()
        .filter(|(j, _)| allowed(*j))
        .map(|(_, &v)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        row.iter_mut().for_each(|v| *v = 0.0);
        return;
    }
    let mut total = 0.0;
    for (j, v) in row.iter_mut().enumerate() {
        *v = if allowed(j) { (*v - max).exp() } else { 0.0 };
        total += *v;
    }
    let inv = 1.0 / total;
    row.iter_mut().for_each(|v| *v *= inv);
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn row(t: &mut Tape, v: &[f64]) -> Var {
        t.variable(Tensor::row_vector(v.to_vec()))
    }

    #[test]
    fn relu_forward() {
        let mut t = Tape::new();
        let x = row(&mut t, &[-1.0, 0.0, 2.0]);
        let y = t.relu(x).unwrap();
        assert_eq!(t.value(y).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let mut t = Tape::new();
        let x = row(&mut t, &[0.0, 0.0]);
        let y = t.softmax(x).unwrap();
        assert_eq!(t.value(y).data(), &[0.5, 0.5]);
    }

    #[test]
    fn softmax_is_shift_invariant_and_normalised() {
        let mut t = Tape::new();
        let x = row(&mut t, &[0.3, -1.2, 4.0, 2.5]);
        let xs = row(&mut t, &[100.3, 98.8, 104.0, 102.5]);
        let a = t.softmax(x).unwrap();
        let b = t.softmax(xs).unwrap();
        let sum: f64 = t.value(a).data().iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        for (p, q) in t.value(a).data().iter().zip(t.value(b).data()) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn masked_softmax_zeroes_masked_and_empty_rows() {
        let mut t = Tape::new();
        let x = t.variable(Tensor::new(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
        let y = t
            .masked_softmax(x, &[true, false, true, false, false, false])
            .unwrap();
        let v = t.value(y).data();
        assert_eq!(v[1], 0.0);
        assert!((v[0] + v[2] - 1.0).abs() < 1e-15);
        assert_eq!(&v[3..], &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn shape_mismatch_names_both_shapes() {
        let mut t = Tape::new();
        let a = t.variable(Tensor::zeros(3, 4));
        let b = t.variable(Tensor::zeros(3, 2));
        let err = t.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("(3, 4)") && msg.contains("(3, 2)"), "{msg}");
    }

    #[test]
    fn backward_of_sum_is_ones() {
        let mut t = Tape::new();
        let x = row(&mut t, &[1.0, -2.0, 3.0]);
        let s = t.sum(x).unwrap();
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn sigmoid_gradient_at_zero_is_quarter_x() {
        let mut t = Tape::new();
        let w = row(&mut t, &[0.0, 0.0, 0.0]);
        let x = t.constant(Tensor::row_vector(vec![1.0, -2.0, 0.5]));
        let z = t.matmul_nt(w, x).unwrap();
        let s = t.sigmoid(z).unwrap();
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(w).unwrap().data(), &[0.25, -0.5, 0.125]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut t = Tape::new();
        let x = row(&mut t, &[1.0, 2.0]);
        assert!(matches!(t.backward(x), Err(Error::NonScalarLoss((1, 2)))));
    }

    #[test]
    fn reused_tensor_accumulates_both_paths() {
        // loss = sum(x ⊙ 2) + sum(relu(x)) using x twice.
        let mut t = Tape::new();
        let x = row(&mut t, &[1.0, -1.0, 2.0]);
        let a = t.scale(x, 2.0).unwrap();
        let b = t.relu(x).unwrap();
        let c = t.add(a, b).unwrap();
        let loss = t.sum(c).unwrap();
        let g = t.backward(loss).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[3.0, 2.0, 3.0]);
    }

    #[test]
    fn dropout_eval_is_identity_and_train_is_reproducible() {
        let mut t = Tape::new();
        let x = t.variable(Tensor::filled(4, 8, 1.0));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(t.dropout(x, 0.3, &mut rng, false).unwrap(), x);
        let a = t.dropout(x, 0.3, &mut ChaCha8Rng::seed_from_u64(3), true).unwrap();
        let b = t.dropout(x, 0.3, &mut ChaCha8Rng::seed_from_u64(3), true).unwrap();
        assert_eq!(t.value(a), t.value(b));
        assert!(t.value(a).data().iter().any(|&v| v == 0.0));
        assert!(t.dropout(x, 1.0, &mut rng, true).is_err());
    }

    #[test]
    fn non_finite_output_is_rejected() {
        let mut t = Tape::new();
        let x = row(&mut t, &[1e308]);
        assert!(matches!(t.scale(x, 10.0), Err(Error::NonFinite(_))));
    }

    #[test]
    fn bce_with_logits_is_stable_for_large_logits() {
        let mut t = Tape::new();
        let z = row(&mut t, &[800.0, -800.0]);
        let l = t.bce_with_logits(z, &[1.0, 0.0]).unwrap();
        assert!(t.value(l).item() < 1e-300);
        let g = t.backward(l).unwrap();
        assert!(g.get(z).unwrap().is_finite());
    }
}
