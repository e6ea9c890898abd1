//! Define-by-run tape. Nodes are appended in evaluation order, so the tape
//! itself is a topological order and backward is a single reverse sweep.

use std::sync::Arc;

use super::array::{gemm, Array2};
use super::AutodiffError;

/// Inputs to `arccos` are clamped to this interval before the derivative is taken.
pub const ARCCOS_GRAD_CLAMP: f64 = 1e-9;

/// Floor on the row norm in `rowwise_normalize`.
pub const NORMALIZE_EPS: f64 = 1e-12;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// The operation that produced a node.
#[derive(Debug, Clone, PartialEq)]
pub enum OpKind {
    Leaf,
    MatMul,
    /// `m x n` plus a `1 x n` bias broadcast over rows.
    AddRowwiseBias,
    Add,
    Sub,
    /// Elementwise product.
    Mul,
    Scale(f64),
    Tanh,
    LeakyRelu(f64),
    Elu,
    Square,
    Sqrt,
    /// `ln(1 + e^x)`, evaluated stably.
    Softplus,
    MeanAll,
    /// `m x n -> m x 1`, summing each row.
    SumRows,
    /// `m x n -> m x 1` Euclidean row norms.
    RowwiseL2Norm,
    /// Each row divided by `max(|row|, NORMALIZE_EPS)`.
    RowwiseNormalize,
    Clamp { lo: f64, hi: f64 },
    Arccos,
    /// `min(x, c)`; the derivative is 1 strictly below `c` and 0 otherwise.
    MinWithConst(f64),
    /// `m x d` and `k x d` -> `m x k` Euclidean distances between rows.
    PairwiseRowDistance,
    Transpose,
    /// Picks `(row, col)` entries into a `t x 1` column.
    GatherEntries(Arc<[(usize, usize)]>),
    /// Row-wise log-softmax.
    LogSoftmaxRows,
}

impl OpKind {
    pub fn name(&self) -> &'static str {
        match self {
            OpKind::Leaf => "leaf",
            OpKind::MatMul => "matmul",
            OpKind::AddRowwiseBias => "add_rowwise_bias",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::Scale(_) => "scale",
            OpKind::Tanh => "tanh",
            OpKind::LeakyRelu(_) => "leaky_relu",
            OpKind::Elu => "elu",
            OpKind::Square => "square",
            OpKind::Sqrt => "sqrt",
            OpKind::Softplus => "softplus",
            OpKind::MeanAll => "mean_all",
            OpKind::SumRows => "sum_rows",
            OpKind::RowwiseL2Norm => "rowwise_l2_norm",
            OpKind::RowwiseNormalize => "rowwise_normalize",
            OpKind::Clamp { .. } => "clamp",
            OpKind::Arccos => "arccos",
            OpKind::MinWithConst(_) => "min_with_const",
            OpKind::PairwiseRowDistance => "pairwise_row_distance",
            OpKind::Transpose => "transpose",
            OpKind::GatherEntries(_) => "gather_entries",
            OpKind::LogSoftmaxRows => "log_softmax_rows",
        }
    }

    fn arity(&self) -> usize {
        match self {
            OpKind::Leaf => 0,
            OpKind::MatMul
            | OpKind::AddRowwiseBias
            | OpKind::Add
            | OpKind::Sub
            | OpKind::Mul
            | OpKind::PairwiseRowDistance => 2,
            _ => 1,
        }
    }
}

struct Node {
    value: Array2,
    op: OpKind,
    parents: Vec<usize>,
    requires_grad: bool,
}

/// A reverse-mode differentiation tape.
///
/// Build one per step: leaves for parameters and inputs, then ops. A graph is
/// not shared between threads.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of a scalar loss, indexed by node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Array2>>,
}

impl Gradients {
    /// `d loss / d var`, or `None` if `var` does not influence the loss or is a constant.
    pub fn get(&self, var: Var) -> Option<&Array2> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    /// Like [`Gradients::get`] but returns zeros shaped like the node when absent.
    pub fn get_or_zeros(&self, graph: &Graph, var: Var) -> Array2 {
        self.get(var).cloned().unwrap_or_else(|| {
            let (r, c) = graph.value(var).shape();
            Array2::zeros(r, c)
        })
    }
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

    /// A leaf that receives a gradient.
    pub fn param(&mut self, value: Array2) -> Var {
        self.push(value, OpKind::Leaf, Vec::new(), true)
    }

    /// A leaf treated as a constant by backward.
    pub fn constant(&mut self, value: Array2) -> Var {
        self.push(value, OpKind::Leaf, Vec::new(), false)
    }

    pub fn value(&self, var: Var) -> &Array2 {
        &self.nodes[var.0].value
    }

    pub fn op(&self, var: Var) -> &OpKind {
        &self.nodes[var.0].op
    }

    pub fn parents(&self, var: Var) -> Vec<Var> {
        self.nodes[var.0].parents.iter().map(|&p| Var(p)).collect()
    }

    /// Scalar value of a 1x1 node.
    pub fn scalar(&self, var: Var) -> Result<f64, AutodiffError> {
        let v = self.value(var);
        v.item().ok_or(AutodiffError::NonScalarLoss {
            rows: v.rows(),
            cols: v.cols(),
        })
    }

    fn push(&mut self, value: Array2, op: OpKind, parents: Vec<usize>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            parents,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Evaluates `op` on `inputs` and records the result on the tape.
    pub fn apply(&mut self, op: OpKind, inputs: &[Var]) -> Result<Var, AutodiffError> {
        if matches!(op, OpKind::Leaf) || inputs.len() != op.arity() {
            return Err(AutodiffError::Contract(format!(
                "{} takes {} input(s), got {}",
                op.name(),
                op.arity(),
                inputs.len()
            )));
        }
        let values: Vec<&Array2> = inputs.iter().map(|v| &self.nodes[v.0].value).collect();
        let out = forward_value(&op, &values)?;
        if !out.is_finite() {
            return Err(AutodiffError::NonFinite { op: op.name() });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let parents = inputs.iter().map(|v| v.0).collect();
        Ok(self.push(out, op, parents, requires_grad))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.apply(OpKind::MatMul, &[a, b])
    }

    pub fn add_rowwise_bias(&mut self, x: Var, bias: Var) -> Result<Var, AutodiffError> {
        self.apply(OpKind::AddRowwiseBias, &[x, bias])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.apply(OpKind::Add, &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.apply(OpKind::Sub, &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.apply(OpKind::Mul, &[a, b])
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Result<Var, AutodiffError> {
        self.apply(OpKind::Scale(s), &[x])
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var, AutodiffError> {
        self.apply(OpKind::Tanh, &[x])
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var, AutodiffError> {
        self.apply(OpKind::LeakyRelu(slope), &[x])
    }

    pub fn elu(&mut self, x: Var) -> Result<Var, AutodiffError> {
        self.apply(OpKind::Elu, &[x])
    }

    pub fn square(&mut self, x: Var) -> Result<Var, AutodiffError> {
        self.apply(OpKind::Square, &[x])
    }

    pub fn sqrt(&mut self, x: Var) -> Result<Var, AutodiffError> {
        self.apply(OpKind::Sqrt, &[x])
    }

    pub fn softplus(&mut self, x: Var) -> Result<Var, AutodiffError> {
        self.apply(OpKind::Softplus, &[x])
    }

    pub fn mean_all(&mut self, x: Var) -> Result<Var, AutodiffError> {
        self.apply(OpKind::MeanAll, &[x])
    }

    pub fn sum_rows(&mut self, x: Var) -> Result<Var, AutodiffError> {
        self.apply(OpKind::SumRows, &[x])
    }

    pub fn rowwise_l2_norm(&mut self, x: Var) -> Result<Var, AutodiffError> {
        self.apply(OpKind::RowwiseL2Norm, &[x])
    }

    pub fn rowwise_normalize(&mut self, x: Var) -> Result<Var, AutodiffError> {
        self.apply(OpKind::RowwiseNormalize, &[x])
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Result<Var, AutodiffError> {
        if lo > hi {
            return Err(AutodiffError::Contract(format!("clamp bounds reversed: [{lo}, {hi}]")));
        }
        self.apply(OpKind::Clamp { lo, hi }, &[x])
    }

    pub fn arccos(&mut self, x: Var) -> Result<Var, AutodiffError> {
        self.apply(OpKind::Arccos, &[x])
    }

    pub fn min_with_const(&mut self, x: Var, c: f64) -> Result<Var, AutodiffError> {
        self.apply(OpKind::MinWithConst(c), &[x])
    }

    pub fn pairwise_row_distance(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.apply(OpKind::PairwiseRowDistance, &[a, b])
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var, AutodiffError> {
        self.apply(OpKind::Transpose, &[x])
    }

    pub fn gather_entries(&mut self, x: Var, idx: Arc<[(usize, usize)]>) -> Result<Var, AutodiffError> {
        self.apply(OpKind::GatherEntries(idx), &[x])
    }

    pub fn log_softmax_rows(&mut self, x: Var) -> Result<Var, AutodiffError> {
        self.apply(OpKind::LogSoftmaxRows, &[x])
    }

    /// Reverse sweep from a scalar `loss`. Nodes used by several consumers
    /// accumulate the sum of their incoming gradients.
    pub fn backward(&self, loss: Var) -> Result<Gradients, AutodiffError> {
        let shape = self.value(loss).shape();
        if shape != (1, 1) {
            return Err(AutodiffError::NonScalarLoss {
                rows: shape.0,
                cols: shape.1,
            });
        }
        let mut grads: Vec<Option<Array2>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Array2::ones(1, 1));
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || node.parents.is_empty() {
                continue;
            }
            let Some(upstream) = grads[idx].take() else {
                continue;
            };
            let inputs: Vec<&Array2> = node.parents.iter().map(|&p| &self.nodes[p].value).collect();
            let needs: Vec<bool> = node
                .parents
                .iter()
                .map(|&p| self.nodes[p].requires_grad)
                .collect();
            let parent_grads = vjp(&node.op, &inputs, &node.value, &upstream, &needs);
            for ((&p, pg), need) in node.parents.iter().zip(parent_grads).zip(needs) {
                if !need {
                    continue;
                }
                let Some(pg) = pg else { continue };
                match &mut grads[p] {
                    Some(acc) => acc.add_assign(&pg),
                    slot @ None => *slot = Some(pg),
                }
            }
            grads[idx] = Some(upstream);
        }
        // Only leaves keep meaningful entries for callers; interior grads are left in place.
        Ok(Gradients { grads })
    }
}

fn same_shape(op: &OpKind, a: &Array2, b: &Array2) -> Result<(), AutodiffError> {
    if a.shape() != b.shape() {
        return Err(AutodiffError::shape2(op.name(), a, b));
    }
    Ok(())
}

fn zip_map(a: &Array2, b: &Array2, f: impl Fn(f64, f64) -> f64) -> Array2 {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Array2::from_vec(a.rows(), a.cols(), data).expect("shapes checked")
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

fn row_norm(row: &[f64]) -> f64 {
    row.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn forward_value(op: &OpKind, x: &[&Array2]) -> Result<Array2, AutodiffError> {
    let out = match op {
        OpKind::Leaf => unreachable!("leaves are not applied"),
        OpKind::MatMul => {
            if x[0].cols() != x[1].rows() {
                return Err(AutodiffError::shape2(op.name(), x[0], x[1]));
            }
            x[0].matmul(x[1])?
        }
        OpKind::AddRowwiseBias => {
            if x[1].rows() != 1 || x[1].cols() != x[0].cols() {
                return Err(AutodiffError::shape2(op.name(), x[0], x[1]));
            }
            let bias = x[1].data();
            let mut out = x[0].clone();
            for r in 0..out.rows() {
                for (v, b) in out.row_mut(r).iter_mut().zip(bias) {
                    *v += b;
                }
            }
            out
        }
        OpKind::Add => {
            same_shape(op, x[0], x[1])?;
            zip_map(x[0], x[1], |a, b| a + b)
        }
        OpKind::Sub => {
            same_shape(op, x[0], x[1])?;
            zip_map(x[0], x[1], |a, b| a - b)
        }
        OpKind::Mul => {
            same_shape(op, x[0], x[1])?;
            zip_map(x[0], x[1], |a, b| a * b)
        }
        OpKind::Scale(s) => x[0].map(|v| v * s),
        OpKind::Tanh => x[0].map(f64::tanh),
        OpKind::LeakyRelu(s) => x[0].map(|v| if v > 0.0 { v } else { s * v }),
        OpKind::Elu => x[0].map(|v| if v > 0.0 { v } else { v.exp_m1() }),
        OpKind::Square => x[0].map(|v| v * v),
        OpKind::Sqrt => x[0].map(f64::sqrt),
        OpKind::Softplus => x[0].map(softplus),
        OpKind::MeanAll => {
            if x[0].is_empty() {
                return Err(AutodiffError::Shape {
                    op: op.name(),
                    detail: "mean of an empty array".into(),
                });
            }
            Array2::scalar(x[0].sum() / x[0].len() as f64)
        }
        OpKind::SumRows => {
            let a = x[0];
            Array2::from_fn(a.rows(), 1, |r, _| a.row(r).iter().sum())
        }
        OpKind::RowwiseL2Norm => {
            let a = x[0];
            Array2::from_fn(a.rows(), 1, |r, _| row_norm(a.row(r)))
        }
        OpKind::RowwiseNormalize => {
            let a = x[0];
            let mut out = a.clone();
            for r in 0..a.rows() {
                let s = row_norm(a.row(r)).max(NORMALIZE_EPS);
                for v in out.row_mut(r) {
                    *v /= s;
                }
            }
            out
        }
        OpKind::Clamp { lo, hi } => x[0].map(|v| v.clamp(*lo, *hi)),
        OpKind::Arccos => x[0].map(f64::acos),
        OpKind::MinWithConst(c) => x[0].map(|v| v.min(*c)),
        OpKind::PairwiseRowDistance => {
            let (a, b) = (x[0], x[1]);
            if a.cols() != b.cols() {
                return Err(AutodiffError::shape2(op.name(), a, b));
            }
            Array2::from_fn(a.rows(), b.rows(), |i, j| {
                a.row(i)
                    .iter()
                    .zip(b.row(j))
                    .map(|(p, q)| (p - q) * (p - q))
                    .sum::<f64>()
                    .sqrt()
            })
        }
        OpKind::Transpose => x[0].transpose(),
        OpKind::GatherEntries(idx) => {
            let a = x[0];
            let mut data = Vec::with_capacity(idx.len());
            for &(r, c) in idx.iter() {
                if r >= a.rows() || c >= a.cols() {
                    return Err(AutodiffError::Shape {
                        op: op.name(),
                        detail: format!("entry ({r}, {c}) outside {}x{}", a.rows(), a.cols()),
                    });
                }
                data.push(a.get(r, c));
            }
            Array2::from_vec(idx.len(), 1, data)?
        }
        OpKind::LogSoftmaxRows => {
            let a = x[0];
            let mut out = a.clone();
            for r in 0..a.rows() {
                let row = a.row(r);
                let m = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
                let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
                for v in out.row_mut(r) {
                    *v -= lse;
                }
            }
            out
        }
    };
    Ok(out)
}

/// Vector-Jacobian products for each parent. `None` marks parents that need no gradient.
fn vjp(op: &OpKind, x: &[&Array2], y: &Array2, g: &Array2, needs: &[bool]) -> Vec<Option<Array2>> {
    let elementwise = |f: &dyn Fn(f64, f64, f64) -> f64| -> Array2 {
        let data = x[0]
            .data()
            .iter()
            .zip(y.data())
            .zip(g.data())
            .map(|((&xi, &yi), &gi)| f(xi, yi, gi))
            .collect();
        Array2::from_vec(x[0].rows(), x[0].cols(), data).expect("shape preserved")
    };
    match op {
        OpKind::Leaf => Vec::new(),
        OpKind::MatMul => {
            let (a, b) = (x[0], x[1]);
            let da = needs[0].then(|| {
                let mut out = Array2::zeros(a.rows(), a.cols());
                gemm(g, false, b, true, &mut out, 0.0);
                out
            });
            let db = needs[1].then(|| {
                let mut out = Array2::zeros(b.rows(), b.cols());
                gemm(a, true, g, false, &mut out, 0.0);
                out
            });
            vec![da, db]
        }
        OpKind::AddRowwiseBias => {
            let db = needs[1].then(|| {
                let mut out = Array2::zeros(1, g.cols());
                for r in 0..g.rows() {
                    for (acc, v) in out.data_mut().iter_mut().zip(g.row(r)) {
                        *acc += v;
                    }
                }
                out
            });
            vec![needs[0].then(|| g.clone()), db]
        }
        OpKind::Add => vec![needs[0].then(|| g.clone()), needs[1].then(|| g.clone())],
        OpKind::Sub => vec![needs[0].then(|| g.clone()), needs[1].then(|| g.map(|v| -v))],
        OpKind::Mul => vec![
            needs[0].then(|| zip_map(g, x[1], |gi, b| gi * b)),
            needs[1].then(|| zip_map(g, x[0], |gi, a| gi * a)),
        ],
        OpKind::Scale(s) => vec![Some(g.map(|v| v * s))],
        OpKind::Tanh => vec![Some(elementwise(&|_, yi, gi| gi * (1.0 - yi * yi)))],
        OpKind::LeakyRelu(s) => vec![Some(elementwise(&|xi, _, gi| if xi > 0.0 { gi } else { gi * s }))],
        OpKind::Elu => vec![Some(elementwise(&|xi, yi, gi| if xi > 0.0 { gi } else { gi * (yi + 1.0) }))],
        OpKind::Square => vec![Some(elementwise(&|xi, _, gi| 2.0 * xi * gi))],
        OpKind::Sqrt => vec![Some(elementwise(&|_, yi, gi| if yi > 0.0 { 0.5 * gi / yi } else { 0.0 }))],
        OpKind::Softplus => vec![Some(elementwise(&|xi, _, gi| gi * sigmoid(xi)))],
        OpKind::MeanAll => {
            let n = x[0].len() as f64;
            vec![Some(Array2::filled(x[0].rows(), x[0].cols(), g.data()[0] / n))]
        }
        OpKind::SumRows => {
            let a = x[0];
            vec![Some(Array2::from_fn(a.rows(), a.cols(), |r, _| g.get(r, 0)))]
        }
        OpKind::RowwiseL2Norm => {
            let a = x[0];
            vec![Some(Array2::from_fn(a.rows(), a.cols(), |r, c| {
                let n = y.get(r, 0);
                if n > 0.0 {
                    g.get(r, 0) * a.get(r, c) / n
                } else {
                    0.0
                }
            }))]
        }
        OpKind::RowwiseNormalize => {
            let a = x[0];
            let mut out = Array2::zeros(a.rows(), a.cols());
            for r in 0..a.rows() {
                let norm = row_norm(a.row(r));
                let yr = y.row(r);
                let gr = g.row(r);
                if norm < NORMALIZE_EPS {
                    // Guarded rows are a plain scaling by 1 / NORMALIZE_EPS.
                    for (o, &gi) in out.row_mut(r).iter_mut().zip(gr) {
                        *o = gi / NORMALIZE_EPS;
                    }
                    continue;
                }
                let s = norm;
                let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                for ((o, &yi), &gi) in out.row_mut(r).iter_mut().zip(yr).zip(gr) {
                    *o = (gi - yi * dot) / s;
                }
            }
            vec![Some(out)]
        }
        OpKind::Clamp { lo, hi } => {
            vec![Some(elementwise(&|xi, _, gi| if xi > *lo && xi < *hi { gi } else { 0.0 }))]
        }
        OpKind::Arccos => {
            let bound = 1.0 - ARCCOS_GRAD_CLAMP;
            vec![Some(elementwise(&|xi, _, gi| {
                let xc = xi.clamp(-bound, bound);
                -gi / (1.0 - xc * xc).sqrt()
            }))]
        }
        OpKind::MinWithConst(c) => vec![Some(elementwise(&|xi, _, gi| if xi < *c { gi } else { 0.0 }))],
        OpKind::PairwiseRowDistance => {
            let (a, b) = (x[0], x[1]);
            let mut da = Array2::zeros(a.rows(), a.cols());
            let mut db = Array2::zeros(b.rows(), b.cols());
            for i in 0..a.rows() {
                for j in 0..b.rows() {
                    let d = y.get(i, j);
                    let gij = g.get(i, j);
                    if d <= 0.0 || gij == 0.0 {
                        continue;
                    }
                    let w = gij / d;
                    let (ai, bj) = (a.row(i), b.row(j));
                    for c in 0..a.cols() {
                        let diff = w * (ai[c] - bj[c]);
                        da.data_mut()[i * a.cols() + c] += diff;
                        db.data_mut()[j * b.cols() + c] -= diff;
                    }
                }
            }
            vec![needs[0].then_some(da), needs[1].then_some(db)]
        }
        OpKind::Transpose => vec![Some(g.transpose())],
        OpKind::GatherEntries(idx) => {
            let a = x[0];
            let mut out = Array2::zeros(a.rows(), a.cols());
            for (t, &(r, c)) in idx.iter().enumerate() {
                out.data_mut()[r * a.cols() + c] += g.data()[t];
            }
            vec![Some(out)]
        }
        OpKind::LogSoftmaxRows => {
            let mut out = g.clone();
            for r in 0..y.rows() {
                let gsum: f64 = g.row(r).iter().sum();
                for (o, &yi) in out.row_mut(r).iter_mut().zip(y.row(r)) {
                    *o -= yi.exp() * gsum;
                }
            }
            vec![Some(out)]
        }
    }
}
