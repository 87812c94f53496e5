//! Tape-based reverse-mode differentiation over dense tensors.
//!
//! Every operation appends a node to the [`Tape`]; node ids are therefore a
//! topological order and [`Tape::backward`] visits each node exactly once in
//! reverse. Elementwise binary operations broadcast any dimension of size 1.

use std::cmp::Ordering;
use std::sync::Arc;

use super::tensor::Tensor;
use crate::error::{GspnError, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Incoming adjacency lists: `sources[v]` are the rows averaged into row `v`.
pub type Sources = Arc<Vec<Vec<usize>>>;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Shift(Var),
    MatMul(Var, Var),
    Log(Var),
    Exp(Var),
    Sqrt(Var),
    Softplus(Var),
    LogSumExpRows(Var),
    LogSoftmaxRows(Var),
    SoftmaxRows(Var),
    Sum(Var),
    Mean(Var),
    SumRows(Var),
    SumCols(Var),
    GaussianLogPdf {
        x: Var,
        mu: Var,
        sigma: Var,
    },
    GatherCols {
        table: Var,
        index: Arc<Vec<Option<usize>>>,
    },
    Element {
        a: Var,
        row: usize,
        col: usize,
    },
    NeighborMean {
        a: Var,
        sources: Sources,
    },
    SelectRows {
        keep: Arc<Vec<bool>>,
        a: Var,
        fallback: Var,
    },
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Records operations and their values for a later backward pass.
#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every node on the tape.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    /// Gradient of `v`; zeros when the objective does not depend on it.
    pub fn wrt(&self, v: Var) -> Tensor {
        self.grads[v.0].clone().unwrap_or_else(|| {
            let (r, c) = self.shapes[v.0];
            Tensor::zeros(r, c)
        })
    }
}

const HALF_LN_TAU: f64 = 0.918_938_533_204_672_8;

/// Lexicographic total order on rows, used to make sums independent of the
/// order in which rows are presented.
fn cmp_rows(a: &[f64], b: &[f64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            Ordering::Equal => continue,
            o => return o,
        }
    }
    Ordering::Equal
}

/// Sums the given rows of `t` in value order.
fn sorted_row_sum(t: &Tensor, rows: &[usize]) -> Vec<f64> {
    let mut order: Vec<usize> = rows.to_vec();
    order.sort_by(|&p, &q| cmp_rows(t.row(p), t.row(q)));
    let mut acc = vec![0.0; t.cols()];
    for r in order {
        for (s, x) in acc.iter_mut().zip(t.row(r)) {
            *s += x;
        }
    }
    acc
}

fn broadcast_dim(a: usize, b: usize) -> Option<usize> {
    if a == b {
        Some(a)
    } else if a == 1 {
        Some(b)
    } else if b == 1 {
        Some(a)
    } else {
        None
    }
}

fn broadcast_shape(
    op: &'static str,
    a: (usize, usize),
    b: (usize, usize),
) -> Result<(usize, usize)> {
    match (broadcast_dim(a.0, b.0), broadcast_dim(a.1, b.1)) {
        (Some(r), Some(c)) => Ok((r, c)),
        _ => Err(GspnError::ShapeMismatch { op, lhs: a, rhs: b }),
    }
}

#[inline]
fn bget(t: &Tensor, r: usize, c: usize) -> f64 {
    let rr = if t.rows() == 1 { 0 } else { r };
    let cc = if t.cols() == 1 { 0 } else { c };
    t.get(rr, cc)
}

/// Adds `g` (of the broadcast shape) into `acc` (of the operand shape).
fn reduce_into(acc: &mut Tensor, g: &Tensor, scale: impl Fn(usize, usize) -> f64) {
    let (ar, ac) = acc.shape();
    for r in 0..g.rows() {
        let rr = if ar == 1 { 0 } else { r };
        for c in 0..g.cols() {
            let cc = if ac == 1 { 0 } else { c };
            let v = acc.get(rr, cc) + g.get(r, c) * scale(r, c);
            acc.set(rr, cc, v);
        }
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(sum(exp(row)))` with max-shift; `-inf` for an all `-inf` row.
pub fn log_sum_exp(row: &[f64]) -> f64 {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    if m == f64::INFINITY {
        return m;
    }
    m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// A leaf: parameters and constants alike.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn constant(&mut self, value: f64) -> Var {
        self.leaf(Tensor::scalar(value))
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (r, c) = broadcast_shape(name, ta.shape(), tb.shape())?;
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r {
            for j in 0..c {
                out.push(f(bget(ta, i, j), bget(tb, i, j)));
            }
        }
        Ok(self.push(Tensor::new(r, c, out), op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let value = self.value(a).map(|x| x * factor);
        self.push(value, Op::Scale(a, factor))
    }

    pub fn shift(&mut self, a: Var, offset: f64) -> Var {
        let value = self.value(a).map(|x| x + offset);
        self.push(value, Op::Shift(a))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.cols() != tb.rows() {
            return Err(GspnError::ShapeMismatch {
                op: "matmul",
                lhs: ta.shape(),
                rhs: tb.shape(),
            });
        }
        let (n, k, m) = (ta.rows(), ta.cols(), tb.cols());
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let arow = ta.row(i);
            let orow = &mut out[i * m..(i + 1) * m];
            for (p, &x) in arow.iter().enumerate().take(k) {
                for (o, &y) in orow.iter_mut().zip(tb.row(p)) {
                    *o += x * y;
                }
            }
        }
        Ok(self.push(Tensor::new(n, m, out), Op::MatMul(a, b)))
    }

    pub fn log(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::ln);
        self.push(value, Op::Log(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::exp);
        self.push(value, Op::Exp(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::sqrt);
        self.push(value, Op::Sqrt(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let value = self.value(a).map(softplus);
        self.push(value, Op::Softplus(a))
    }

    /// Row-wise log-sum-exp: `n x m -> n x 1`.
    pub fn log_sum_exp_rows(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let out: Vec<f64> = (0..t.rows()).map(|r| log_sum_exp(t.row(r))).collect();
        self.push(Tensor::column_vector(out), Op::LogSumExpRows(a))
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let mut out = t.clone();
        for r in 0..t.rows() {
            let lse = log_sum_exp(t.row(r));
            for x in out.row_mut(r) {
                *x -= lse;
            }
        }
        self.push(out, Op::LogSoftmaxRows(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let mut out = t.clone();
        for r in 0..t.rows() {
            let row = out.row_mut(r);
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for x in row.iter_mut() {
                *x = (*x - m).exp();
                s += *x;
            }
            for x in row.iter_mut() {
                *x /= s;
            }
        }
        self.push(out, Op::SoftmaxRows(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        self.push(Tensor::scalar(s), Op::Mean(a))
    }

    /// `n x m -> n x 1`.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let out = (0..t.rows()).map(|r| t.row(r).iter().sum()).collect();
        self.push(Tensor::column_vector(out), Op::SumRows(a))
    }

    /// `n x m -> 1 x m`, accumulating rows in value order so the result does
    /// not depend on row order.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let all: Vec<usize> = (0..t.rows()).collect();
        let out = sorted_row_sum(t, &all);
        self.push(Tensor::row_vector(out), Op::SumCols(a))
    }

    /// Elementwise `log N(x; mu, sigma^2)` with broadcasting over all three.
    pub fn gaussian_log_pdf(&mut self, x: Var, mu: Var, sigma: Var) -> Result<Var> {
        let (tx, tm, ts) = (self.value(x), self.value(mu), self.value(sigma));
        if let Some(s) = ts.data().iter().find(|s| !(**s > 0.0)) {
            return Err(GspnError::InvalidParameter(format!(
                "gaussian scale must be positive, got {s}"
            )));
        }
        let s1 = broadcast_shape("gaussian_log_pdf", tx.shape(), tm.shape())?;
        let (r, c) = broadcast_shape("gaussian_log_pdf", s1, ts.shape())?;
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r {
            for j in 0..c {
                let s = bget(ts, i, j);
                let z = (bget(tx, i, j) - bget(tm, i, j)) / s;
                out.push(-HALF_LN_TAU - s.ln() - 0.5 * z * z);
            }
        }
        Ok(self.push(Tensor::new(r, c, out), Op::GaussianLogPdf { x, mu, sigma }))
    }

    /// For a `c x k` table and one optional column index per output row,
    /// returns `n x c` with `out[v, i] = table[i, index[v]]`, or 0 when the
    /// index is `None`.
    pub fn gather_cols(&mut self, table: Var, index: Arc<Vec<Option<usize>>>) -> Result<Var> {
        let t = self.value(table);
        let (c, k) = t.shape();
        let mut out = Vec::with_capacity(index.len() * c);
        for idx in index.iter() {
            match idx {
                Some(j) if *j >= k => {
                    return Err(GspnError::ShapeMismatch {
                        op: "gather_cols",
                        lhs: (c, k),
                        rhs: (1, *j + 1),
                    })
                }
                Some(j) => out.extend((0..c).map(|i| t.get(i, *j))),
                None => out.extend(std::iter::repeat_n(0.0, c)),
            }
        }
        Ok(self.push(
            Tensor::new(index.len(), c, out),
            Op::GatherCols { table, index },
        ))
    }

    pub fn element(&mut self, a: Var, row: usize, col: usize) -> Var {
        let value = Tensor::scalar(self.value(a).get(row, col));
        self.push(value, Op::Element { a, row, col })
    }

    /// Row `v` of the output is the mean of rows `sources[v]` of `a`,
    /// accumulated in value order; rows without sources are zero.
    pub fn neighbor_mean(&mut self, a: Var, sources: Sources) -> Var {
        let t = self.value(a);
        let c = t.cols();
        let mut out = Vec::with_capacity(sources.len() * c);
        for srcs in sources.iter() {
            if srcs.is_empty() {
                out.extend(std::iter::repeat_n(0.0, c));
            } else {
                let deg = srcs.len() as f64;
                out.extend(sorted_row_sum(t, srcs).into_iter().map(|s| s / deg));
            }
        }
        self.push(
            Tensor::new(sources.len(), c, out),
            Op::NeighborMean { a, sources },
        )
    }

    /// Row `v` is `a[v]` where `keep[v]`, otherwise the `1 x m` `fallback`.
    pub fn select_rows(&mut self, keep: Arc<Vec<bool>>, a: Var, fallback: Var) -> Result<Var> {
        let (ta, tf) = (self.value(a), self.value(fallback));
        if tf.rows() != 1 || tf.cols() != ta.cols() || keep.len() != ta.rows() {
            return Err(GspnError::ShapeMismatch {
                op: "select_rows",
                lhs: ta.shape(),
                rhs: tf.shape(),
            });
        }
        let mut out = ta.clone();
        for (r, k) in keep.iter().enumerate() {
            if !k {
                out.row_mut(r).copy_from_slice(tf.row(0));
            }
        }
        Ok(self.push(out, Op::SelectRows { keep, a, fallback }))
    }

    /// Reverse pass from a scalar `root`.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let shape = self.shape(root);
        if shape != (1, 1) {
            return Err(GspnError::ShapeMismatch {
                op: "backward (objective must be scalar)",
                lhs: shape,
                rhs: (1, 1),
            });
        }
        let n = root.0 + 1;
        let mut grads: Vec<Option<Tensor>> = vec![None; n];
        grads[root.0] = Some(Tensor::scalar(1.0));

        fn acc(grads: &mut [Option<Tensor>], v: Var, shape: (usize, usize)) -> &mut Tensor {
            grads[v.0].get_or_insert_with(|| Tensor::zeros(shape.0, shape.1))
        }

        for i in (0..n).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let y = &node.value;
            match &node.op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    reduce_into(acc(&mut grads, *a, self.shape(*a)), &g, |_, _| 1.0);
                    reduce_into(acc(&mut grads, *b, self.shape(*b)), &g, |_, _| 1.0);
                }
                Op::Sub(a, b) => {
                    reduce_into(acc(&mut grads, *a, self.shape(*a)), &g, |_, _| 1.0);
                    reduce_into(acc(&mut grads, *b, self.shape(*b)), &g, |_, _| -1.0);
                }
                Op::Mul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    reduce_into(acc(&mut grads, *a, ta.shape()), &g, |r, c| bget(tb, r, c));
                    reduce_into(acc(&mut grads, *b, tb.shape()), &g, |r, c| bget(ta, r, c));
                }
                Op::Scale(a, f) => {
                    let ga = acc(&mut grads, *a, y.shape());
                    for (o, x) in ga.data_mut().iter_mut().zip(g.data()) {
                        *o += f * x;
                    }
                }
                Op::Shift(a) => acc(&mut grads, *a, y.shape()).add_assign(&g),
                Op::MatMul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let (nr, k, m) = (ta.rows(), ta.cols(), tb.cols());
                    let ga = acc(&mut grads, *a, ta.shape());
                    for r in 0..nr {
                        for p in 0..k {
                            let mut s = 0.0;
                            for c in 0..m {
                                s += g.get(r, c) * tb.get(p, c);
                            }
                            ga.set(r, p, ga.get(r, p) + s);
                        }
                    }
                    let gb = acc(&mut grads, *b, tb.shape());
                    for r in 0..nr {
                        for p in 0..k {
                            let x = ta.get(r, p);
                            if x == 0.0 {
                                continue;
                            }
                            for c in 0..m {
                                gb.set(p, c, gb.get(p, c) + x * g.get(r, c));
                            }
                        }
                    }
                }
                Op::Log(a) => {
                    let ta = self.value(*a);
                    let ga = acc(&mut grads, *a, ta.shape());
                    for ((o, x), gi) in ga.data_mut().iter_mut().zip(ta.data()).zip(g.data()) {
                        *o += gi / x;
                    }
                }
                Op::Exp(a) => {
                    let ga = acc(&mut grads, *a, y.shape());
                    for ((o, yi), gi) in ga.data_mut().iter_mut().zip(y.data()).zip(g.data()) {
                        *o += gi * yi;
                    }
                }
                Op::Sqrt(a) => {
                    let ga = acc(&mut grads, *a, y.shape());
                    for ((o, yi), gi) in ga.data_mut().iter_mut().zip(y.data()).zip(g.data()) {
                        *o += gi * 0.5 / yi;
                    }
                }
                Op::Softplus(a) => {
                    let ta = self.value(*a);
                    let ga = acc(&mut grads, *a, ta.shape());
                    for ((o, x), gi) in ga.data_mut().iter_mut().zip(ta.data()).zip(g.data()) {
                        *o += gi * sigmoid(*x);
                    }
                }
                Op::LogSumExpRows(a) => {
                    let ta = self.value(*a);
                    let ga = acc(&mut grads, *a, ta.shape());
                    for r in 0..ta.rows() {
                        let lse = y.get(r, 0);
                        if lse == f64::NEG_INFINITY {
                            continue;
                        }
                        let gr = g.get(r, 0);
                        for (o, x) in ga.row_mut(r).iter_mut().zip(ta.row(r)) {
                            *o += gr * (x - lse).exp();
                        }
                    }
                }
                Op::LogSoftmaxRows(a) => {
                    let ga = acc(&mut grads, *a, y.shape());
                    for r in 0..y.rows() {
                        let gs: f64 = g.row(r).iter().sum();
                        for ((o, yi), gi) in ga.row_mut(r).iter_mut().zip(y.row(r)).zip(g.row(r)) {
                            *o += gi - yi.exp() * gs;
                        }
                    }
                }
                Op::SoftmaxRows(a) => {
                    let ga = acc(&mut grads, *a, y.shape());
                    for r in 0..y.rows() {
                        let dot: f64 = g.row(r).iter().zip(y.row(r)).map(|(a, b)| a * b).sum();
                        for ((o, yi), gi) in ga.row_mut(r).iter_mut().zip(y.row(r)).zip(g.row(r)) {
                            *o += yi * (gi - dot);
                        }
                    }
                }
                Op::Sum(a) => {
                    let gv = g.item();
                    for o in acc(&mut grads, *a, self.shape(*a)).data_mut() {
                        *o += gv;
                    }
                }
                Op::Mean(a) => {
                    let shape = self.shape(*a);
                    let gv = g.item() / (shape.0 * shape.1) as f64;
                    for o in acc(&mut grads, *a, shape).data_mut() {
                        *o += gv;
                    }
                }
                Op::SumRows(a) => {
                    let ga = acc(&mut grads, *a, self.shape(*a));
                    for r in 0..ga.rows() {
                        let gr = g.get(r, 0);
                        for o in ga.row_mut(r) {
                            *o += gr;
                        }
                    }
                }
                Op::SumCols(a) => {
                    let ga = acc(&mut grads, *a, self.shape(*a));
                    for r in 0..ga.rows() {
                        for (o, gi) in ga.row_mut(r).iter_mut().zip(g.row(0)) {
                            *o += gi;
                        }
                    }
                }
                Op::GaussianLogPdf { x, mu, sigma } => {
                    let (tx, tm, ts) = (self.value(*x), self.value(*mu), self.value(*sigma));
                    let z = |r: usize, c: usize| (bget(tx, r, c) - bget(tm, r, c)) / bget(ts, r, c);
                    reduce_into(acc(&mut grads, *x, tx.shape()), &g, |r, c| {
                        -z(r, c) / bget(ts, r, c)
                    });
                    reduce_into(acc(&mut grads, *mu, tm.shape()), &g, |r, c| {
                        z(r, c) / bget(ts, r, c)
                    });
                    reduce_into(acc(&mut grads, *sigma, ts.shape()), &g, |r, c| {
                        let zz = z(r, c);
                        (zz * zz - 1.0) / bget(ts, r, c)
                    });
                }
                Op::GatherCols { table, index } => {
                    let gt = acc(&mut grads, *table, self.shape(*table));
                    for (v, idx) in index.iter().enumerate() {
                        if let Some(j) = idx {
                            for (i, gi) in g.row(v).iter().enumerate() {
                                gt.set(i, *j, gt.get(i, *j) + gi);
                            }
                        }
                    }
                }
                Op::Element { a, row, col } => {
                    let ga = acc(&mut grads, *a, self.shape(*a));
                    ga.set(*row, *col, ga.get(*row, *col) + g.item());
                }
                Op::NeighborMean { a, sources } => {
                    let ga = acc(&mut grads, *a, self.shape(*a));
                    for (v, srcs) in sources.iter().enumerate() {
                        if srcs.is_empty() {
                            continue;
                        }
                        let inv = 1.0 / srcs.len() as f64;
                        for &u in srcs {
                            for (o, gi) in ga.row_mut(u).iter_mut().zip(g.row(v)) {
                                *o += gi * inv;
                            }
                        }
                    }
                }
                Op::SelectRows { keep, a, fallback } => {
                    let ga = acc(&mut grads, *a, self.shape(*a));
                    for (r, k) in keep.iter().enumerate() {
                        if *k {
                            for (o, gi) in ga.row_mut(r).iter_mut().zip(g.row(r)) {
                                *o += gi;
                            }
                        }
                    }
                    let gf = acc(&mut grads, *fallback, self.shape(*fallback));
                    for (r, k) in keep.iter().enumerate() {
                        if !*k {
                            for (o, gi) in gf.row_mut(0).iter_mut().zip(g.row(r)) {
                                *o += gi;
                            }
                        }
                    }
                }
            }
            grads[i] = Some(g);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape()).collect();
        grads.resize(self.nodes.len(), None);
        Ok(Gradients { grads, shapes })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn log_sum_exp_closed_form() {
        assert!((log_sum_exp(&[0.0, 0.0]) - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY; 3]), f64::NEG_INFINITY);
        assert!((log_sum_exp(&[1000.0, 1000.0]) - (1000.0 + std::f64::consts::LN_2)).abs() < 1e-12);
    }

    #[test]
    fn gaussian_standard_density() {
        let mut t = Tape::new();
        let x = t.constant(0.0);
        let mu = t.constant(0.0);
        let s = t.constant(1.0);
        let y = t.gaussian_log_pdf(x, mu, s).unwrap();
        assert!((t.value(y).item() + 0.5 * (2.0 * PI).ln()).abs() < 1e-15);
        assert!((t.value(y).item() + 0.918939).abs() < 1e-6);
        let bad = t.constant(0.0);
        assert!(t.gaussian_log_pdf(x, mu, bad).is_err());
    }

    #[test]
    fn square_gradient() {
        let mut t = Tape::new();
        let p = t.leaf(Tensor::scalar(3.0));
        let y = t.mul(p, p).unwrap();
        let g = t.backward(y).unwrap();
        assert_eq!(g.wrt(p).item(), 6.0);
    }

    #[test]
    fn constant_objective_zero_gradient() {
        let mut t = Tape::new();
        let p = t.leaf(Tensor::scalar(3.0));
        let c = t.constant(5.0);
        let g = t.backward(c).unwrap();
        assert_eq!(g.wrt(p).item(), 0.0);
        assert!(g.get(p).is_none());
    }

    #[test]
    fn backward_requires_scalar() {
        let mut t = Tape::new();
        let p = t.leaf(Tensor::zeros(2, 1));
        assert!(t.backward(p).is_err());
    }

    #[test]
    fn shape_mismatch_errors() {
        let mut t = Tape::new();
        let a = t.leaf(Tensor::zeros(2, 3));
        let b = t.leaf(Tensor::zeros(3, 2));
        assert!(t.add(a, b).is_err());
        assert!(t.matmul(a, a).is_err());
        assert!(t.matmul(a, b).is_ok());
    }

    #[test]
    fn softmax_rows_normalized() {
        let mut t = Tape::new();
        let a = t.leaf(Tensor::from_rows(&[
            vec![1.0, -3.0, 40.0],
            vec![0.0, 0.0, 0.0],
        ]));
        let s = t.softmax_rows(a);
        for r in 0..2 {
            let total: f64 = t.value(s).row(r).iter().sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn neighbor_mean_is_order_independent() {
        let mut t = Tape::new();
        let a = t.leaf(Tensor::from_rows(&[vec![0.1], vec![0.7], vec![1e-17]]));
        let fwd = t.neighbor_mean(a, Arc::new(vec![vec![0, 1, 2], vec![]]));
        let rev = t.neighbor_mean(a, Arc::new(vec![vec![2, 1, 0], vec![]]));
        assert_eq!(t.value(fwd), t.value(rev));
        assert_eq!(t.value(fwd).get(1, 0), 0.0);
    }
}
