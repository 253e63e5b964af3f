//! Define-by-run reverse-mode autodiff.
//!
//! Operations append nodes to a [`Tape`], caching forward values; node ids
//! are indices, so insertion order is already a topological order and
//! [`Tape::backward`] visits nodes in exact reverse. Gradients accumulate
//! by summation across fan-out. The op set is exactly what the transformer
//! and its losses need.

use super::array::{matmul, NDArray};
use super::{Scalar, TensorError};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

const GELU_C0: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_C1: f64 = 0.044_715;

#[derive(Debug)]
enum Op<T: Scalar> {
    Leaf,
    MatMul,
    /// Elementwise addition of same-shape arrays.
    Add,
    /// Row-vector bias added to every row of a matrix.
    AddRow,
    Scale(T),
    AddScalar(T),
    SoftmaxRows,
    LogSoftmaxRows,
    Log,
    Gelu,
    Square,
    /// Inputs: x, gamma, beta.
    LayerNorm { eps: T },
    EmbeddingGather { ids: Vec<usize> },
    ConcatCols { widths: Vec<usize> },
    Transpose,
    MaskedFill { mask: Vec<bool> },
    SliceCols { start: usize },
    PickEntries { cols: Vec<usize> },
    Sum,
    Mean,
}

#[derive(Debug)]
struct Node<T: Scalar> {
    op: Op<T>,
    inputs: Vec<NodeId>,
    value: NDArray<T>,
}

/// Gradients per node, indexed by [`NodeId`]. Nodes the loss does not
/// depend on have no entry.
#[derive(Debug)]
pub struct Gradients<T: Scalar> {
    grads: Vec<Option<NDArray<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, id: NodeId) -> Option<&NDArray<T>> {
        self.grads[id.0].as_ref()
    }

    /// Gradient for `id`, or zeros of the given shape if the loss does not
    /// depend on it.
    pub fn get_or_zeros(&self, id: NodeId, shape: &[usize]) -> NDArray<T> {
        match &self.grads[id.0] {
            Some(g) => g.clone(),
            None => NDArray::zeros(shape),
        }
    }
}

/// Recording tape. Build one per batch, run ops, call [`Tape::backward`].
#[derive(Debug, Default)]
pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Cached forward value of a node.
    pub fn value(&self, id: NodeId) -> &NDArray<T> {
        &self.nodes[id.0].value
    }

    fn push(&mut self, op: Op<T>, inputs: Vec<NodeId>, value: NDArray<T>) -> NodeId {
        self.nodes.push(Node { op, inputs, value });
        NodeId(self.nodes.len() - 1)
    }

    /// Enter an input (parameter or constant). Gradients flow to every
    /// leaf; callers read the ones they care about.
    pub fn leaf(&mut self, value: NDArray<T>) -> NodeId {
        self.push(Op::Leaf, vec![], value)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let v = matmul(self.value(a), self.value(b))?;
        Ok(self.push(Op::MatMul, vec![a, b], v))
    }

    /// `a + b` for equal shapes, or `b` broadcast across rows of `a` when
    /// `b` is a row vector of matching width. No other broadcasting.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() == vb.shape() {
            let mut out = va.clone();
            for (o, &x) in out.data_mut().iter_mut().zip(vb.data()) {
                *o += x;
            }
            return Ok(self.push(Op::Add, vec![a, b], out));
        }
        if va.shape().len() == 2 && vb.shape().len() == 1 && vb.len() == va.cols() {
            let mut out = va.clone();
            let c = va.cols();
            for r in 0..va.rows() {
                for (o, &x) in out.row_mut(r).iter_mut().zip(vb.data()) {
                    *o += x;
                }
                debug_assert_eq!(c, vb.len());
            }
            return Ok(self.push(Op::AddRow, vec![a, b], out));
        }
        Err(TensorError::ShapeMismatch {
            op: "add",
            detail: format!("{:?} + {:?}", va.shape(), vb.shape()),
        })
    }

    pub fn scale(&mut self, a: NodeId, k: T) -> NodeId {
        let v = self.value(a).map(|x| x * k);
        self.push(Op::Scale(k), vec![a], v)
    }

    pub fn add_scalar(&mut self, a: NodeId, k: T) -> NodeId {
        let v = self.value(a).map(|x| x + k);
        self.push(Op::AddScalar(k), vec![a], v)
    }

    /// Row-wise softmax with max subtraction for overflow safety.
    pub fn softmax_rows(&mut self, a: NodeId) -> Result<NodeId, TensorError> {
        let va = require_rank2(self.value(a), "softmax_rows")?;
        let mut out = va.clone();
        for r in 0..out.rows() {
            softmax_row_in_place(out.row_mut(r));
        }
        Ok(self.push(Op::SoftmaxRows, vec![a], out))
    }

    /// Row-wise log-softmax, the numerically safe path for likelihoods.
    pub fn log_softmax_rows(&mut self, a: NodeId) -> Result<NodeId, TensorError> {
        let va = require_rank2(self.value(a), "log_softmax_rows")?;
        let mut out = va.clone();
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            let m = row.iter().cloned().fold(T::neg_infinity(), T::max);
            let mut s = T::zero();
            for x in row.iter() {
                s += (*x - m).exp();
            }
            let ls = m + s.ln();
            for x in row.iter_mut() {
                *x = *x - ls;
            }
        }
        Ok(self.push(Op::LogSoftmaxRows, vec![a], out))
    }

    pub fn log(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| x.ln());
        self.push(Op::Log, vec![a], v)
    }

    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(gelu_forward);
        self.push(Op::Gelu, vec![a], v)
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| x * x);
        self.push(Op::Square, vec![a], v)
    }

    /// Per-row normalization of `x` to zero mean and unit variance,
    /// then `gamma ⊙ x̂ + beta` (both row vectors).
    pub fn layer_norm(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        eps: T,
    ) -> Result<NodeId, TensorError> {
        let vx = require_rank2(self.value(x), "layer_norm")?;
        let (vg, vb) = (self.value(gamma), self.value(beta));
        if vg.shape() != [vx.cols()] || vb.shape() != [vx.cols()] {
            return Err(TensorError::ShapeMismatch {
                op: "layer_norm",
                detail: format!(
                    "x {:?}, gamma {:?}, beta {:?}",
                    vx.shape(),
                    vg.shape(),
                    vb.shape()
                ),
            });
        }
        let mut out = vx.clone();
        for r in 0..out.rows() {
            let (mean, inv) = row_moments(self.value(x).row(r), eps);
            let gdata = self.value(gamma).data();
            let bdata = self.value(beta).data();
            let xrow: Vec<T> = self.value(x).row(r).to_vec();
            for (j, o) in out.row_mut(r).iter_mut().enumerate() {
                *o = gdata[j] * ((xrow[j] - mean) * inv) + bdata[j];
            }
        }
        Ok(self.push(Op::LayerNorm { eps }, vec![x, gamma, beta], out))
    }

    /// Gather rows of `table` by id: out[t, :] = table[ids[t], :].
    pub fn embedding_gather(
        &mut self,
        table: NodeId,
        ids: &[usize],
    ) -> Result<NodeId, TensorError> {
        let vt = require_rank2(self.value(table), "embedding_gather")?;
        let (rows, cols) = (vt.rows(), vt.cols());
        if let Some(&bad) = ids.iter().find(|&&i| i >= rows) {
            return Err(TensorError::IndexOutOfBounds {
                op: "embedding_gather",
                index: bad,
                extent: rows,
            });
        }
        let mut out = NDArray::zeros(&[ids.len(), cols]);
        for (t, &id) in ids.iter().enumerate() {
            out.row_mut(t).copy_from_slice(self.value(table).row(id));
        }
        Ok(self.push(
            Op::EmbeddingGather { ids: ids.to_vec() },
            vec![table],
            out,
        ))
    }

    /// Concatenate rank-2 arrays left to right; all must share row count.
    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId, TensorError> {
        if parts.is_empty() {
            return Err(TensorError::ShapeMismatch {
                op: "concat_cols",
                detail: "no inputs".to_string(),
            });
        }
        let rows = require_rank2(self.value(parts[0]), "concat_cols")?.rows();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let v = require_rank2(self.value(p), "concat_cols")?;
            if v.rows() != rows {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_cols",
                    detail: format!("row counts {} vs {}", rows, v.rows()),
                });
            }
            widths.push(v.cols());
        }
        let total: usize = widths.iter().sum();
        let mut out = NDArray::zeros(&[rows, total]);
        for r in 0..rows {
            let mut at = 0;
            for (&p, &w) in parts.iter().zip(&widths) {
                out.row_mut(r)[at..at + w].copy_from_slice(self.value(p).row(r));
                at += w;
            }
        }
        Ok(self.push(Op::ConcatCols { widths }, parts.to_vec(), out))
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId, TensorError> {
        let v = require_rank2(self.value(a), "transpose")?.transposed();
        Ok(self.push(Op::Transpose, vec![a], v))
    }

    /// Replace masked entries with `fill`; gradients through them are zero.
    pub fn masked_fill(
        &mut self,
        a: NodeId,
        mask: &[bool],
        fill: T,
    ) -> Result<NodeId, TensorError> {
        let va = self.value(a);
        if mask.len() != va.len() {
            return Err(TensorError::ShapeMismatch {
                op: "masked_fill",
                detail: format!("mask length {} vs {} elements", mask.len(), va.len()),
            });
        }
        let mut out = va.clone();
        for (o, &m) in out.data_mut().iter_mut().zip(mask) {
            if m {
                *o = fill;
            }
        }
        Ok(self.push(Op::MaskedFill { mask: mask.to_vec() }, vec![a], out))
    }

    /// Columns `start..end` of a rank-2 array.
    pub fn slice_cols(&mut self, a: NodeId, start: usize, end: usize) -> Result<NodeId, TensorError> {
        let va = require_rank2(self.value(a), "slice_cols")?;
        if start >= end || end > va.cols() {
            return Err(TensorError::ShapeMismatch {
                op: "slice_cols",
                detail: format!("{start}..{end} of {} columns", va.cols()),
            });
        }
        let mut out = NDArray::zeros(&[va.rows(), end - start]);
        for r in 0..va.rows() {
            out.row_mut(r).copy_from_slice(&self.value(a).row(r)[start..end]);
        }
        Ok(self.push(Op::SliceCols { start }, vec![a], out))
    }

    /// out[i] = a[i, cols[i]] — one picked entry per row.
    pub fn pick_entries(&mut self, a: NodeId, cols: &[usize]) -> Result<NodeId, TensorError> {
        let va = require_rank2(self.value(a), "pick_entries")?;
        if cols.len() != va.rows() {
            return Err(TensorError::ShapeMismatch {
                op: "pick_entries",
                detail: format!("{} indices for {} rows", cols.len(), va.rows()),
            });
        }
        if let Some(&bad) = cols.iter().find(|&&c| c >= va.cols()) {
            return Err(TensorError::IndexOutOfBounds {
                op: "pick_entries",
                index: bad,
                extent: va.cols(),
            });
        }
        let data: Vec<T> = cols.iter().enumerate().map(|(i, &c)| va.at(i, c)).collect();
        let out = NDArray::from_vec(&[cols.len()], data).expect("length matches");
        Ok(self.push(Op::PickEntries { cols: cols.to_vec() }, vec![a], out))
    }

    /// Sum of all entries, as a scalar node.
    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s = self.value(a).data().iter().fold(T::zero(), |acc, &x| acc + x);
        self.push(Op::Sum, vec![a], NDArray::scalar(s))
    }

    /// Mean of all entries, as a scalar node.
    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let n = T::from_f64_c(self.value(a).len() as f64);
        let s = self.value(a).data().iter().fold(T::zero(), |acc, &x| acc + x);
        self.push(Op::Mean, vec![a], NDArray::scalar(s / n))
    }

    /// Reverse pass from a scalar loss. Returns ∂loss/∂node for every node
    /// the loss depends on; read leaves via [`Gradients::get`].
    pub fn backward(&self, loss: NodeId) -> Result<Gradients<T>, TensorError> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(TensorError::NonScalarLoss {
                shape: lv.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<NDArray<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(NDArray::full(lv.shape(), T::one()));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backward_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn backward_node(&self, i: usize, g: &NDArray<T>, grads: &mut [Option<NDArray<T>>]) {
        let node = &self.nodes[i];
        let input = |k: usize| &self.nodes[node.inputs[k].0].value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul => {
                let (a, b) = (input(0), input(1));
                let da = matmul(g, &b.transposed()).expect("shapes fixed by forward");
                let db = matmul(&a.transposed(), g).expect("shapes fixed by forward");
                accumulate(&mut grads[node.inputs[0].0], da);
                accumulate(&mut grads[node.inputs[1].0], db);
            }
            Op::Add => {
                accumulate(&mut grads[node.inputs[0].0], g.clone());
                accumulate(&mut grads[node.inputs[1].0], g.clone());
            }
            Op::AddRow => {
                accumulate(&mut grads[node.inputs[0].0], g.clone());
                let mut db = NDArray::zeros(&[g.cols()]);
                for r in 0..g.rows() {
                    for (s, &x) in db.data_mut().iter_mut().zip(g.row(r)) {
                        *s += x;
                    }
                }
                accumulate(&mut grads[node.inputs[1].0], db);
            }
            Op::Scale(k) => {
                accumulate(&mut grads[node.inputs[0].0], g.map(|x| x * *k));
            }
            Op::AddScalar(_) => {
                accumulate(&mut grads[node.inputs[0].0], g.clone());
            }
            Op::SoftmaxRows => {
                let y = &node.value;
                let mut dx = g.clone();
                for r in 0..y.rows() {
                    let yr = y.row(r);
                    let dot = yr
                        .iter()
                        .zip(g.row(r))
                        .fold(T::zero(), |acc, (&yv, &gv)| acc + yv * gv);
                    for (d, &yv) in dx.row_mut(r).iter_mut().zip(yr) {
                        *d = yv * (*d - dot);
                    }
                }
                accumulate(&mut grads[node.inputs[0].0], dx);
            }
            Op::LogSoftmaxRows => {
                let y = &node.value;
                let mut dx = g.clone();
                for r in 0..y.rows() {
                    let s = g.row(r).iter().fold(T::zero(), |acc, &x| acc + x);
                    for (d, &yv) in dx.row_mut(r).iter_mut().zip(y.row(r)) {
                        *d = *d - yv.exp() * s;
                    }
                }
                accumulate(&mut grads[node.inputs[0].0], dx);
            }
            Op::Log => {
                let x = input(0);
                let mut dx = g.clone();
                for (d, &xv) in dx.data_mut().iter_mut().zip(x.data()) {
                    *d = *d / xv;
                }
                accumulate(&mut grads[node.inputs[0].0], dx);
            }
            Op::Gelu => {
                let x = input(0);
                let mut dx = g.clone();
                for (d, &xv) in dx.data_mut().iter_mut().zip(x.data()) {
                    *d = *d * gelu_derivative(xv);
                }
                accumulate(&mut grads[node.inputs[0].0], dx);
            }
            Op::Square => {
                let x = input(0);
                let two = T::from_f64_c(2.0);
                let mut dx = g.clone();
                for (d, &xv) in dx.data_mut().iter_mut().zip(x.data()) {
                    *d = *d * two * xv;
                }
                accumulate(&mut grads[node.inputs[0].0], dx);
            }
            Op::LayerNorm { eps } => {
                let (x, gamma) = (input(0), input(1));
                let (rows, cols) = (x.rows(), x.cols());
                let cn = T::from_f64_c(cols as f64);
                let mut dx = NDArray::zeros(&[rows, cols]);
                let mut dgamma = NDArray::zeros(&[cols]);
                let mut dbeta = NDArray::zeros(&[cols]);
                for r in 0..rows {
                    let (mean, inv) = row_moments(x.row(r), *eps);
                    let xhat: Vec<T> = x.row(r).iter().map(|&v| (v - mean) * inv).collect();
                    let gr = g.row(r);
                    for j in 0..cols {
                        dbeta.data_mut()[j] += gr[j];
                        dgamma.data_mut()[j] += gr[j] * xhat[j];
                    }
                    let dxhat: Vec<T> =
                        (0..cols).map(|j| gr[j] * gamma.data()[j]).collect();
                    let m1 = dxhat.iter().fold(T::zero(), |a, &v| a + v) / cn;
                    let m2 = dxhat
                        .iter()
                        .zip(&xhat)
                        .fold(T::zero(), |a, (&d, &h)| a + d * h)
                        / cn;
                    for j in 0..cols {
                        dx.row_mut(r)[j] = inv * (dxhat[j] - m1 - xhat[j] * m2);
                    }
                }
                accumulate(&mut grads[node.inputs[0].0], dx);
                accumulate(&mut grads[node.inputs[1].0], dgamma);
                accumulate(&mut grads[node.inputs[2].0], dbeta);
            }
            Op::EmbeddingGather { ids } => {
                let table = input(0);
                let mut dt = NDArray::zeros(&[table.rows(), table.cols()]);
                for (t, &id) in ids.iter().enumerate() {
                    for (s, &x) in dt.row_mut(id).iter_mut().zip(g.row(t)) {
                        *s += x;
                    }
                }
                accumulate(&mut grads[node.inputs[0].0], dt);
            }
            Op::ConcatCols { widths } => {
                let mut at = 0;
                for (k, &w) in widths.iter().enumerate() {
                    let mut dp = NDArray::zeros(&[g.rows(), w]);
                    for r in 0..g.rows() {
                        dp.row_mut(r).copy_from_slice(&g.row(r)[at..at + w]);
                    }
                    accumulate(&mut grads[node.inputs[k].0], dp);
                    at += w;
                }
            }
            Op::Transpose => {
                accumulate(&mut grads[node.inputs[0].0], g.transposed());
            }
            Op::MaskedFill { mask } => {
                let mut dx = g.clone();
                for (d, &m) in dx.data_mut().iter_mut().zip(mask) {
                    if m {
                        *d = T::zero();
                    }
                }
                accumulate(&mut grads[node.inputs[0].0], dx);
            }
            Op::SliceCols { start } => {
                let x = input(0);
                let mut dx = NDArray::zeros(&[x.rows(), x.cols()]);
                for r in 0..g.rows() {
                    dx.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                }
                accumulate(&mut grads[node.inputs[0].0], dx);
            }
            Op::PickEntries { cols } => {
                let x = input(0);
                let mut dx = NDArray::zeros(&[x.rows(), x.cols()]);
                for (i, &c) in cols.iter().enumerate() {
                    *dx.at_mut(i, c) += g.data()[i];
                }
                accumulate(&mut grads[node.inputs[0].0], dx);
            }
            Op::Sum => {
                let x = input(0);
                accumulate(
                    &mut grads[node.inputs[0].0],
                    NDArray::full(x.shape(), g.item()),
                );
            }
            Op::Mean => {
                let x = input(0);
                let n = T::from_f64_c(x.len() as f64);
                accumulate(
                    &mut grads[node.inputs[0].0],
                    NDArray::full(x.shape(), g.item() / n),
                );
            }
        }
    }
}

fn accumulate<T: Scalar>(slot: &mut Option<NDArray<T>>, delta: NDArray<T>) {
    match slot {
        Some(g) => {
            debug_assert_eq!(g.shape(), delta.shape());
            for (a, &b) in g.data_mut().iter_mut().zip(delta.data()) {
                *a += b;
            }
        }
        None => *slot = Some(delta),
    }
}

fn require_rank2<'a, T: Scalar>(
    v: &'a NDArray<T>,
    op: &'static str,
) -> Result<&'a NDArray<T>, TensorError> {
    if v.shape().len() == 2 {
        Ok(v)
    } else {
        Err(TensorError::ShapeMismatch {
            op,
            detail: format!("expected rank 2, got {:?}", v.shape()),
        })
    }
}

fn softmax_row_in_place<T: Scalar>(row: &mut [T]) {
    let m = row.iter().cloned().fold(T::neg_infinity(), T::max);
    let mut s = T::zero();
    for x in row.iter_mut() {
        *x = (*x - m).exp();
        s += *x;
    }
    for x in row.iter_mut() {
        *x = *x / s;
    }
}

/// Mean and inverse standard deviation (biased variance) of one row.
fn row_moments<T: Scalar>(row: &[T], eps: T) -> (T, T) {
    let n = T::from_f64_c(row.len() as f64);
    let mean = row.iter().fold(T::zero(), |a, &x| a + x) / n;
    let var = row
        .iter()
        .fold(T::zero(), |a, &x| a + (x - mean) * (x - mean))
        / n;
    (mean, (var + eps).sqrt().recip())
}

fn gelu_forward<T: Scalar>(x: T) -> T {
    let half = T::from_f64_c(0.5);
    let c0 = T::from_f64_c(GELU_C0);
    let c1 = T::from_f64_c(GELU_C1);
    half * x * (T::one() + (c0 * (x + c1 * x * x * x)).tanh())
}

fn gelu_derivative<T: Scalar>(x: T) -> T {
    let half = T::from_f64_c(0.5);
    let c0 = T::from_f64_c(GELU_C0);
    let c1 = T::from_f64_c(GELU_C1);
    let three = T::from_f64_c(3.0);
    let u = c0 * (x + c1 * x * x * x);
    let t = u.tanh();
    half * (T::one() + t) + half * x * (T::one() - t * t) * c0 * (T::one() + three * c1 * x * x)
}
