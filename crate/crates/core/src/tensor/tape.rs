//! Define-by-run reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every operation applied to its [`Var`] handles. Node ids
//! increase monotonically, so reverse id order is a valid reverse topological
//! order for [`Tape::backward`]. Tapes are rebuilt for every optimisation step.

use std::cell::RefCell;

use super::dense::Tensor;
use super::kernels;
use crate::error::{Error, Result};

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddRow(usize, usize),
    MulScalarVar(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    Relu(usize),
    Tanh(usize),
    Exp(usize),
    Square(usize),
    Sum(usize),
    SumRows(usize),
    SoftmaxRows(usize),
    LogSoftmaxRows(usize),
    Pick(usize, Vec<usize>),
    ConcatCols(usize, usize),
    SliceCols(usize, usize),
    GatherRows(usize, Vec<usize>),
    GatherCols(usize, Vec<usize>),
    SegmentMean(usize, Vec<usize>, Vec<usize>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Tensor>,
}

/// Recording of one forward evaluation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn leaf(&self, value: Tensor, requires_grad: bool) -> Var<'_> {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Trainable leaf.
    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.leaf(value, true)
    }

    /// Leaf excluded from differentiation.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.leaf(value, false)
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn needs_grad(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].requires_grad)
    }

    fn shape_of(&self, id: usize) -> (usize, usize) {
        self.nodes.borrow()[id].value.shape()
    }

    fn unary(&self, a: usize, op: Op, f: impl FnOnce(&Tensor) -> Tensor) -> Var<'_> {
        let value = f(&self.nodes.borrow()[a].value);
        let rg = self.needs_grad(&[a]);
        self.push(value, op, rg)
    }

    fn binary(
        &self,
        a: usize,
        b: usize,
        op: Op,
        f: impl FnOnce(&Tensor, &Tensor) -> Tensor,
    ) -> Var<'_> {
        let value = {
            let nodes = self.nodes.borrow();
            f(&nodes[a].value, &nodes[b].value)
        };
        let rg = self.needs_grad(&[a, b]);
        self.push(value, op, rg)
    }

    /// Clears accumulated gradients on every node.
    pub fn zero_grads(&self) {
        for n in self.nodes.borrow_mut().iter_mut() {
            n.grad = None;
        }
    }

    /// Back-propagates from a scalar `loss`, adding into the stored gradients of
    /// every reachable node that requires one.
    pub fn backward(&self, loss: Var<'_>) -> Result<()> {
        let mut nodes = self.nodes.borrow_mut();
        if nodes[loss.id].value.shape() != (1, 1) {
            return Err(Error::Contract(format!(
                "backward() needs a scalar loss, got shape {:?}",
                nodes[loss.id].value.shape()
            )));
        }
        let mut local: Vec<Option<Tensor>> = (0..=loss.id).map(|_| None).collect();
        local[loss.id] = Some(Tensor::scalar(1.0));

        for id in (0..=loss.id).rev() {
            let Some(g) = local[id].take() else { continue };
            if !nodes[id].requires_grad {
                continue;
            }
            propagate(&nodes, id, &g, &mut local);
            let node = &mut nodes[id];
            match node.grad.as_mut() {
                Some(acc) => acc.add_assign(&g),
                None => node.grad = Some(g),
            }
        }
        Ok(())
    }
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        Some(acc) => acc.add_assign(&g),
        None => *slot = Some(g),
    }
}

fn propagate(nodes: &[Node], id: usize, g: &Tensor, local: &mut [Option<Tensor>]) {
    let node = &nodes[id];
    let out = &node.value;
    let wants = |i: usize| nodes[i].requires_grad;
    match &node.op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let av = &nodes[*a].value;
            let bv = &nodes[*b].value;
            let (m, k) = av.shape();
            let n = bv.cols();
            if wants(*a) {
                let bt = bv.transpose();
                let mut da = vec![0.0; m * k];
                kernels::matmul(g.data(), bt.data(), m, n, k, &mut da);
                accumulate(&mut local[*a], Tensor::new(m, k, da).expect("shape"));
            }
            if wants(*b) {
                let at = av.transpose();
                let mut db = vec![0.0; k * n];
                kernels::matmul(at.data(), g.data(), k, m, n, &mut db);
                accumulate(&mut local[*b], Tensor::new(k, n, db).expect("shape"));
            }
        }
        Op::Add(a, b) => {
            if wants(*a) {
                accumulate(&mut local[*a], g.clone());
            }
            if wants(*b) {
                accumulate(&mut local[*b], g.clone());
            }
        }
        Op::Sub(a, b) => {
            if wants(*a) {
                accumulate(&mut local[*a], g.clone());
            }
            if wants(*b) {
                accumulate(&mut local[*b], g.map(|x| -x));
            }
        }
        Op::Mul(a, b) => {
            let av = &nodes[*a].value;
            let bv = &nodes[*b].value;
            if wants(*a) {
                accumulate(&mut local[*a], zip_map(g, bv, |x, y| x * y));
            }
            if wants(*b) {
                accumulate(&mut local[*b], zip_map(g, av, |x, y| x * y));
            }
        }
        Op::AddRow(a, bias) => {
            if wants(*a) {
                accumulate(&mut local[*a], g.clone());
            }
            if wants(*bias) {
                let mut db = Tensor::zeros(1, g.cols());
                for r in 0..g.rows() {
                    for (d, x) in db.data_mut().iter_mut().zip(g.row(r)) {
                        *d += x;
                    }
                }
                accumulate(&mut local[*bias], db);
            }
        }
        Op::MulScalarVar(a, s) => {
            let av = &nodes[*a].value;
            let sv = nodes[*s].value.item();
            if wants(*a) {
                accumulate(&mut local[*a], g.map(|x| x * sv));
            }
            if wants(*s) {
                let ds: f64 = g.data().iter().zip(av.data()).map(|(x, y)| x * y).sum();
                accumulate(&mut local[*s], Tensor::scalar(ds));
            }
        }
        Op::Scale(a, c) => {
            if wants(*a) {
                accumulate(&mut local[*a], g.map(|x| x * c));
            }
        }
        Op::AddScalar(a) => {
            if wants(*a) {
                accumulate(&mut local[*a], g.clone());
            }
        }
        Op::Relu(a) => {
            if wants(*a) {
                let av = &nodes[*a].value;
                accumulate(
                    &mut local[*a],
                    zip_map(g, av, |x, y| if y > 0.0 { x } else { 0.0 }),
                );
            }
        }
        Op::Tanh(a) => {
            if wants(*a) {
                accumulate(&mut local[*a], zip_map(g, out, |x, y| x * (1.0 - y * y)));
            }
        }
        Op::Exp(a) => {
            if wants(*a) {
                accumulate(&mut local[*a], zip_map(g, out, |x, y| x * y));
            }
        }
        Op::Square(a) => {
            if wants(*a) {
                let av = &nodes[*a].value;
                accumulate(&mut local[*a], zip_map(g, av, |x, y| 2.0 * x * y));
            }
        }
        Op::Sum(a) => {
            if wants(*a) {
                let (r, c) = nodes[*a].value.shape();
                accumulate(&mut local[*a], Tensor::filled(r, c, g.item()));
            }
        }
        Op::SumRows(a) => {
            if wants(*a) {
                let (r, c) = nodes[*a].value.shape();
                let mut d = Tensor::zeros(r, c);
                for i in 0..r {
                    let gi = g.get(i, 0);
                    d.row_mut(i).fill(gi);
                }
                accumulate(&mut local[*a], d);
            }
        }
        Op::SoftmaxRows(a) => {
            if wants(*a) {
                let mut d = Tensor::zeros(out.rows(), out.cols());
                for i in 0..out.rows() {
                    let y = out.row(i);
                    let gy = g.row(i);
                    let dot: f64 = y.iter().zip(gy).map(|(p, q)| p * q).sum();
                    for ((dx, &p), &q) in d.row_mut(i).iter_mut().zip(y).zip(gy) {
                        *dx = p * (q - dot);
                    }
                }
                accumulate(&mut local[*a], d);
            }
        }
        Op::LogSoftmaxRows(a) => {
            if wants(*a) {
                let mut d = Tensor::zeros(out.rows(), out.cols());
                for i in 0..out.rows() {
                    let ls = out.row(i);
                    let gy = g.row(i);
                    let total: f64 = gy.iter().sum();
                    for ((dx, &l), &q) in d.row_mut(i).iter_mut().zip(ls).zip(gy) {
                        *dx = q - l.exp() * total;
                    }
                }
                accumulate(&mut local[*a], d);
            }
        }
        Op::Pick(a, labels) => {
            if wants(*a) {
                let (r, c) = nodes[*a].value.shape();
                let mut d = Tensor::zeros(r, c);
                for (i, &l) in labels.iter().enumerate() {
                    d.set(i, l, g.get(i, 0));
                }
                accumulate(&mut local[*a], d);
            }
        }
        Op::ConcatCols(a, b) => {
            let ca = nodes[*a].value.cols();
            let cb = nodes[*b].value.cols();
            if wants(*a) {
                accumulate(&mut local[*a], slice_cols(g, 0, ca));
            }
            if wants(*b) {
                accumulate(&mut local[*b], slice_cols(g, ca, ca + cb));
            }
        }
        Op::SliceCols(a, start) => {
            if wants(*a) {
                let (r, c) = nodes[*a].value.shape();
                let mut d = Tensor::zeros(r, c);
                let w = g.cols();
                for i in 0..r {
                    d.row_mut(i)[*start..start + w].copy_from_slice(g.row(i));
                }
                accumulate(&mut local[*a], d);
            }
        }
        Op::GatherRows(a, idx) => {
            if wants(*a) {
                let (r, c) = nodes[*a].value.shape();
                let mut d = Tensor::zeros(r, c);
                for (k, &src) in idx.iter().enumerate() {
                    for (dx, x) in d.row_mut(src).iter_mut().zip(g.row(k)) {
                        *dx += x;
                    }
                }
                accumulate(&mut local[*a], d);
            }
        }
        Op::GatherCols(a, idx) => {
            if wants(*a) {
                let (r, c) = nodes[*a].value.shape();
                let mut d = Tensor::zeros(r, c);
                for i in 0..r {
                    let gi = g.row(i);
                    let di = d.row_mut(i);
                    for (k, &src) in idx.iter().enumerate() {
                        di[src] += gi[k];
                    }
                }
                accumulate(&mut local[*a], d);
            }
        }
        Op::SegmentMean(a, ids, counts) => {
            if wants(*a) {
                let (r, c) = nodes[*a].value.shape();
                let mut d = Tensor::zeros(r, c);
                for (i, &s) in ids.iter().enumerate() {
                    let inv = 1.0 / counts[s] as f64;
                    for (dx, x) in d.row_mut(i).iter_mut().zip(g.row(s)) {
                        *dx = x * inv;
                    }
                }
                accumulate(&mut local[*a], d);
            }
        }
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.rows(), a.cols(), data).expect("shape")
}

fn slice_cols(t: &Tensor, start: usize, end: usize) -> Tensor {
    let w = end - start;
    let mut data = Vec::with_capacity(t.rows() * w);
    for i in 0..t.rows() {
        data.extend_from_slice(&t.row(i)[start..end]);
    }
    Tensor::new(t.rows(), w, data).expect("shape")
}

fn same_shape(op: &'static str, a: (usize, usize), b: (usize, usize)) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::Dimension { op, lhs: a, rhs: b })
    }
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn shape(&self) -> (usize, usize) {
        self.tape.shape_of(self.id)
    }

    pub fn rows(&self) -> usize {
        self.shape().0
    }

    pub fn cols(&self) -> usize {
        self.shape().1
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    /// Copy of the forward value.
    pub fn value(&self) -> Tensor {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    /// Scalar forward value of a `1 x 1` node.
    pub fn item(&self) -> f64 {
        self.tape.nodes.borrow()[self.id].value.item()
    }

    /// Accumulated gradient, if backward has reached this node.
    pub fn grad(&self) -> Option<Tensor> {
        self.tape.nodes.borrow()[self.id].grad.clone()
    }

    /// New constant leaf holding this node's value.
    pub fn detach(&self) -> Var<'t> {
        self.tape.constant(self.value())
    }

    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        let (m, k) = self.shape();
        let (k2, n) = other.shape();
        if k != k2 {
            return Err(Error::Dimension {
                op: "matmul",
                lhs: (m, k),
                rhs: (k2, n),
            });
        }
        Ok(self
            .tape
            .binary(self.id, other.id, Op::MatMul(self.id, other.id), |a, b| {
                let mut out = vec![0.0; m * n];
                kernels::matmul(a.data(), b.data(), m, k, n, &mut out);
                Tensor::new(m, n, out).expect("shape")
            }))
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        same_shape("add", self.shape(), other.shape())?;
        Ok(self
            .tape
            .binary(self.id, other.id, Op::Add(self.id, other.id), |a, b| {
                zip_map(a, b, |x, y| x + y)
            }))
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        same_shape("sub", self.shape(), other.shape())?;
        Ok(self
            .tape
            .binary(self.id, other.id, Op::Sub(self.id, other.id), |a, b| {
                zip_map(a, b, |x, y| x - y)
            }))
    }

    /// Elementwise product.
    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        same_shape("mul", self.shape(), other.shape())?;
        Ok(self
            .tape
            .binary(self.id, other.id, Op::Mul(self.id, other.id), |a, b| {
                zip_map(a, b, |x, y| x * y)
            }))
    }

    /// Adds a `1 x d` row to every row.
    pub fn add_row(self, bias: Var<'t>) -> Result<Var<'t>> {
        let (_, d) = self.shape();
        if bias.shape() != (1, d) {
            return Err(Error::Dimension {
                op: "add_row",
                lhs: self.shape(),
                rhs: bias.shape(),
            });
        }
        Ok(self
            .tape
            .binary(self.id, bias.id, Op::AddRow(self.id, bias.id), |a, b| {
                let mut out = a.clone();
                for r in 0..out.rows() {
                    for (o, x) in out.row_mut(r).iter_mut().zip(b.data()) {
                        *o += x;
                    }
                }
                out
            }))
    }

    /// Multiplies every entry by a `1 x 1` variable.
    pub fn mul_scalar_var(self, s: Var<'t>) -> Result<Var<'t>> {
        if s.shape() != (1, 1) {
            return Err(Error::Dimension {
                op: "mul_scalar_var",
                lhs: self.shape(),
                rhs: s.shape(),
            });
        }
        Ok(self
            .tape
            .binary(self.id, s.id, Op::MulScalarVar(self.id, s.id), |a, b| {
                let sv = b.item();
                a.map(|x| x * sv)
            }))
    }

    pub fn scale(self, c: f64) -> Var<'t> {
        self.tape
            .unary(self.id, Op::Scale(self.id, c), |a| a.map(|x| x * c))
    }

    pub fn neg(self) -> Var<'t> {
        self.scale(-1.0)
    }

    pub fn add_scalar(self, c: f64) -> Var<'t> {
        self.tape
            .unary(self.id, Op::AddScalar(self.id), |a| a.map(|x| x + c))
    }

    pub fn relu(self) -> Var<'t> {
        self.tape
            .unary(self.id, Op::Relu(self.id), |a| a.map(|x| x.max(0.0)))
    }

    pub fn tanh(self) -> Var<'t> {
        self.tape
            .unary(self.id, Op::Tanh(self.id), |a| a.map(f64::tanh))
    }

    pub fn exp(self) -> Var<'t> {
        self.tape.unary(self.id, Op::Exp(self.id), |a| a.map(f64::exp))
    }

    pub fn square(self) -> Var<'t> {
        self.tape
            .unary(self.id, Op::Square(self.id), |a| a.map(|x| x * x))
    }

    /// Sum of all entries, as `1 x 1`.
    pub fn sum(self) -> Var<'t> {
        self.tape.unary(self.id, Op::Sum(self.id), |a| {
            Tensor::scalar(a.data().iter().sum())
        })
    }

    /// Per-row sum, as `n x 1`.
    pub fn sum_rows(self) -> Var<'t> {
        self.tape.unary(self.id, Op::SumRows(self.id), |a| {
            let data = (0..a.rows()).map(|r| a.row(r).iter().sum()).collect();
            Tensor::new(a.rows(), 1, data).expect("shape")
        })
    }

    /// Row-wise softmax with per-row max subtraction.
    pub fn softmax_rows(self) -> Var<'t> {
        self.tape
            .unary(self.id, Op::SoftmaxRows(self.id), softmax_rows_value)
    }

    /// Row-wise log-softmax (log-sum-exp stabilised).
    pub fn log_softmax_rows(self) -> Var<'t> {
        self.tape
            .unary(self.id, Op::LogSoftmaxRows(self.id), log_softmax_rows_value)
    }

    /// Picks column `labels[i]` of row `i`, as `n x 1`.
    pub fn pick(self, labels: &[usize]) -> Result<Var<'t>> {
        let (r, c) = self.shape();
        if labels.len() != r {
            return Err(Error::Dimension {
                op: "pick",
                lhs: (r, c),
                rhs: (labels.len(), 1),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::Index {
                op: "pick",
                index: bad,
                bound: c,
            });
        }
        let labels = labels.to_vec();
        let picked = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id].value;
            labels
                .iter()
                .enumerate()
                .map(|(i, &l)| a.get(i, l))
                .collect()
        };
        let rg = self.requires_grad();
        Ok(self.tape.push(
            Tensor::new(r, 1, picked).expect("shape"),
            Op::Pick(self.id, labels),
            rg,
        ))
    }

    pub fn concat_cols(self, other: Var<'t>) -> Result<Var<'t>> {
        let (ra, ca) = self.shape();
        let (rb, cb) = other.shape();
        if ra != rb {
            return Err(Error::Dimension {
                op: "concat_cols",
                lhs: (ra, ca),
                rhs: (rb, cb),
            });
        }
        Ok(self
            .tape
            .binary(self.id, other.id, Op::ConcatCols(self.id, other.id), |a, b| {
                let mut data = Vec::with_capacity(ra * (ca + cb));
                for r in 0..ra {
                    data.extend_from_slice(a.row(r));
                    data.extend_from_slice(b.row(r));
                }
                Tensor::new(ra, ca + cb, data).expect("shape")
            }))
    }

    /// Columns `start..end`.
    pub fn slice_cols(self, start: usize, end: usize) -> Result<Var<'t>> {
        let (r, c) = self.shape();
        if start > end || end > c {
            return Err(Error::Index {
                op: "slice_cols",
                index: end,
                bound: c,
            });
        }
        let _ = r;
        Ok(self
            .tape
            .unary(self.id, Op::SliceCols(self.id, start), |a| {
                slice_cols(a, start, end)
            }))
    }

    /// Rows `idx[k]` stacked in order; indices may repeat.
    pub fn gather_rows(self, idx: &[usize]) -> Result<Var<'t>> {
        let (r, _) = self.shape();
        if let Some(&bad) = idx.iter().find(|&&i| i >= r) {
            return Err(Error::Index {
                op: "gather_rows",
                index: bad,
                bound: r,
            });
        }
        let idx = idx.to_vec();
        let value = self.tape.nodes.borrow()[self.id].value.select_rows(&idx);
        let rg = self.requires_grad();
        Ok(self.tape.push(value, Op::GatherRows(self.id, idx), rg))
    }

    /// Output column `k` is input column `idx[k]`.
    pub fn gather_cols(self, idx: &[usize]) -> Result<Var<'t>> {
        let (r, c) = self.shape();
        if let Some(&bad) = idx.iter().find(|&&i| i >= c) {
            return Err(Error::Index {
                op: "gather_cols",
                index: bad,
                bound: c,
            });
        }
        let idx = idx.to_vec();
        let value = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id].value;
            let mut data = Vec::with_capacity(r * idx.len());
            for i in 0..r {
                let row = a.row(i);
                data.extend(idx.iter().map(|&j| row[j]));
            }
            Tensor::new(r, idx.len(), data).expect("shape")
        };
        let rg = self.requires_grad();
        Ok(self.tape.push(value, Op::GatherCols(self.id, idx), rg))
    }

    /// Row `s` of the output is the mean of input rows with `segment_ids[i] == s`;
    /// empty segments give zero rows.
    pub fn segment_mean(self, segment_ids: &[usize], n_segments: usize) -> Result<Var<'t>> {
        let (r, c) = self.shape();
        if segment_ids.len() != r {
            return Err(Error::Dimension {
                op: "segment_mean",
                lhs: (r, c),
                rhs: (segment_ids.len(), 1),
            });
        }
        if let Some(&bad) = segment_ids.iter().find(|&&s| s >= n_segments) {
            return Err(Error::Index {
                op: "segment_mean",
                index: bad,
                bound: n_segments,
            });
        }
        let mut counts = vec![0usize; n_segments];
        for &s in segment_ids {
            counts[s] += 1;
        }
        let value = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id].value;
            let mut out = Tensor::zeros(n_segments, c);
            for (i, &s) in segment_ids.iter().enumerate() {
                for (o, x) in out.row_mut(s).iter_mut().zip(a.row(i)) {
                    *o += x;
                }
            }
            for (s, &k) in counts.iter().enumerate() {
                if k > 0 {
                    let inv = 1.0 / k as f64;
                    out.row_mut(s).iter_mut().for_each(|o| *o *= inv);
                }
            }
            out
        };
        let rg = self.requires_grad();
        Ok(self.tape.push(
            value,
            Op::SegmentMean(self.id, segment_ids.to_vec(), counts),
            rg,
        ))
    }
}

pub(crate) fn softmax_rows_value(a: &Tensor) -> Tensor {
    let mut out = a.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for x in row.iter_mut() {
            *x = (*x - max).exp();
            total += *x;
        }
        for x in row.iter_mut() {
            *x /= total;
        }
    }
    out
}

pub(crate) fn log_softmax_rows_value(a: &Tensor) -> Tensor {
    let mut out = a.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
        for x in row.iter_mut() {
            *x -= lse;
        }
    }
    out
}
