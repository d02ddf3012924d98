//! The Wengert tape: recorded forward ops and the reverse sweep.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::tensor::Tensor;
use crate::error::{CoreError, Result};
use crate::math;

/// Index of a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(pub(crate) usize);

/// The recorded operation of a tape node.
///
/// Each variant stores its input node ids plus whatever constant data the
/// backward pass needs (the forward value itself is cached on the node).
#[derive(Debug, Clone)]
pub enum Op {
    /// Input tensor; trainable when the leaf's tensor had `requires_grad`.
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    Neg(NodeId),
    AddScalar(NodeId, f64),
    MulScalar(NodeId, f64),
    /// Broadcast-add a row vector over every row of a matrix.
    AddRow(NodeId, NodeId),
    MatMul(NodeId, NodeId),
    Relu(NodeId),
    Sigmoid(NodeId),
    Exp(NodeId),
    /// `ln(1 + exp(x - 1))`, the density activation.
    SoftplusShifted(NodeId),
    /// Concatenate two matrices along the last axis.
    Concat(NodeId, NodeId),
    /// Columns `[start, start+len)` of a matrix.
    SliceCols(NodeId, usize, usize),
    /// Gather arbitrary columns (duplicates allowed).
    SelectCols(NodeId, Vec<usize>),
    SumAll(NodeId),
    MeanAll(NodeId),
    /// Row-wise sum: `(r, c) -> (r, 1)`.
    SumLast(NodeId),
    /// Row-wise exclusive prefix sum (position `j` sums entries `< j`).
    CumsumExclLast(NodeId),
    /// Stack `times` copies of the whole block: `(r, c) -> (times*r, c)`.
    TileRows(NodeId, usize),
    /// Repeat each row `times` consecutive times: `(r, c) -> (r*times, c)`.
    RepeatRows(NodeId, usize),
    Reshape(NodeId),
    /// Permute the axes of a rank-3 tensor.
    Permute3(NodeId, [usize; 3]),
    /// Weighted gather from a `(vertices, features)` table: each output row
    /// sums `corners` table rows with the given interpolation weights.
    GridGather {
        table: NodeId,
        indices: Vec<u32>,
        weights: Vec<f64>,
        corners: usize,
    },
    /// Per output element, the sum of a contiguous span of the input row.
    /// Used for histogram overlap bounds; spans index columns of the input.
    OverlapBound {
        weights: NodeId,
        spans: Vec<(u32, u32)>,
        out_cols: usize,
    },
}

struct Node {
    op: Op,
    value: Tensor,
    needs_grad: bool,
}

/// Define-by-run recording of a forward computation.
///
/// Nodes are appended in execution order, so node inputs always precede the
/// node itself — the reverse sweep is a plain reverse iteration.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by node id.
///
/// Only trainable leaves retain gradients; leaves not reachable from the loss
/// report `None`, which callers treat as an exact zero.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor> {
        self.grads.get_mut(id.0).and_then(|g| g.take())
    }
}

// ---------------------------------------------------------------------------
// Dense kernels. The i-k-j loop order keeps the innermost loop a contiguous
// saxpy over output columns, which the compiler auto-vectorizes without
// needing float reassociation.
// ---------------------------------------------------------------------------

/// `out += a · b` for row-major `a: (m, k)`, `b: (k, n)`. `out` is `(m, n)`.
pub(crate) fn matmul_nn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let arow = &a[i * k..i * k + k];
        let orow = &mut out[i * n..i * n + n];
        for (kk, &av) in arow.iter().enumerate() {
            let brow = &b[kk * n..kk * n + n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `out += aᵀ · g` for `a: (m, k)`, `g: (m, n)`. `out` is `(k, n)`.
fn matmul_tn(a: &[f64], g: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(g.len(), m * n);
    debug_assert_eq!(out.len(), k * n);
    for i in 0..m {
        let arow = &a[i * k..i * k + k];
        let grow = &g[i * n..i * n + n];
        for (kk, &av) in arow.iter().enumerate() {
            let orow = &mut out[kk * n..kk * n + n];
            for (o, &gv) in orow.iter_mut().zip(grow) {
                *o += av * gv;
            }
        }
    }
}

pub(crate) fn transpose(x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut t = vec![0.0; x.len()];
    for i in 0..rows {
        for j in 0..cols {
            t[j * rows + i] = x[i * cols + j];
        }
    }
    t
}

fn permute3_kernel(src: &[f64], dims: [usize; 3], perm: [usize; 3], dst: &mut [f64]) {
    let od = [dims[perm[0]], dims[perm[1]], dims[perm[2]]];
    let strides = [dims[1] * dims[2], dims[2], 1];
    let os = [strides[perm[0]], strides[perm[1]], strides[perm[2]]];
    let mut w = 0;
    for o0 in 0..od[0] {
        for o1 in 0..od[1] {
            let base = o0 * os[0] + o1 * os[1];
            for o2 in 0..od[2] {
                dst[w] = src[base + o2 * os[2]];
                w += 1;
            }
        }
    }
}

// ---------------------------------------------------------------------------

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// The forward value of a node.
    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    fn push(&mut self, op: Op, value: Tensor, needs_grad: bool) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            op,
            value,
            needs_grad,
        });
        id
    }

    /// Record an input tensor; trainable iff `t.requires_grad` is set.
    pub fn leaf(&mut self, t: Tensor) -> NodeId {
        let needs = t.requires_grad;
        self.push(Op::Leaf, t, needs)
    }

    /// Record a non-trainable input.
    pub fn constant(&mut self, mut t: Tensor) -> NodeId {
        t.requires_grad = false;
        self.push(Op::Leaf, t, false)
    }

    fn check_same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(CoreError::ShapeMismatch {
                op,
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        Ok(())
    }

    fn elementwise<F: Fn(f64, f64) -> f64>(
        &mut self,
        op_name: &'static str,
        a: NodeId,
        b: NodeId,
        f: F,
        op: Op,
    ) -> Result<NodeId> {
        self.check_same_shape(op_name, a, b)?;
        let va = self.value(a);
        let vb = self.value(b);
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Tensor::new(va.shape().to_vec(), data)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(op, value, needs))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.elementwise("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.elementwise("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.elementwise("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.elementwise("div", a, b, |x, y| x / y, Op::Div(a, b))
    }

    fn map<F: Fn(f64) -> f64>(&mut self, a: NodeId, f: F, op: Op) -> NodeId {
        let va = self.value(a);
        let data = va.data().iter().map(|&x| f(x)).collect();
        let value = Tensor::new(va.shape().to_vec(), data).expect("same shape");
        let needs = self.needs(a);
        self.push(op, value, needs)
    }

    pub fn neg(&mut self, a: NodeId) -> NodeId {
        self.map(a, |x| -x, Op::Neg(a))
    }

    pub fn add_scalar(&mut self, a: NodeId, s: f64) -> NodeId {
        self.map(a, |x| x + s, Op::AddScalar(a, s))
    }

    pub fn mul_scalar(&mut self, a: NodeId, s: f64) -> NodeId {
        self.map(a, |x| x * s, Op::MulScalar(a, s))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.map(a, |x| if x > 0.0 { x } else { 0.0 }, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.map(a, math::sigmoid, Op::Sigmoid(a))
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        self.map(a, math::exp, Op::Exp(a))
    }

    pub fn softplus_shifted(&mut self, a: NodeId) -> NodeId {
        self.map(a, math::softplus_shifted, Op::SoftplusShifted(a))
    }

    /// `x + bias` where `bias` broadcasts over the rows of `x`.
    pub fn add_row(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let vx = self.value(x);
        let vb = self.value(bias);
        let (r, c) = (vx.rows(), vx.cols());
        if vb.numel() != c {
            return Err(CoreError::ShapeMismatch {
                op: "add_row",
                lhs: vx.shape().to_vec(),
                rhs: vb.shape().to_vec(),
            });
        }
        let mut data = vx.data().to_vec();
        let bd = vb.data();
        for i in 0..r {
            for (o, &bv) in data[i * c..i * c + c].iter_mut().zip(bd) {
                *o += bv;
            }
        }
        let value = Tensor::new(vx.shape().to_vec(), data)?;
        let needs = self.needs(x) || self.needs(bias);
        Ok(self.push(Op::AddRow(x, bias), value, needs))
    }

    /// Matrix product `(m, k) · (k, n) -> (m, n)`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let va = self.value(a);
        let vb = self.value(b);
        let (m, k) = (va.rows(), va.cols());
        let (k2, n) = (vb.rows(), vb.cols());
        if k != k2 {
            return Err(CoreError::ShapeMismatch {
                op: "matmul",
                lhs: va.shape().to_vec(),
                rhs: vb.shape().to_vec(),
            });
        }
        let mut out = vec![0.0; m * n];
        matmul_nn(va.data(), vb.data(), m, k, n, &mut out);
        let value = Tensor::matrix(m, n, out)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Op::MatMul(a, b), value, needs))
    }

    /// Concatenate along the last axis: `(r, ca) ++ (r, cb) -> (r, ca+cb)`.
    pub fn concat(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let va = self.value(a);
        let vb = self.value(b);
        let (r, ca) = (va.rows(), va.cols());
        let (rb, cb) = (vb.rows(), vb.cols());
        if r != rb {
            return Err(CoreError::ShapeMismatch {
                op: "concat",
                lhs: va.shape().to_vec(),
                rhs: vb.shape().to_vec(),
            });
        }
        let mut data = vec![0.0; r * (ca + cb)];
        for i in 0..r {
            data[i * (ca + cb)..i * (ca + cb) + ca].copy_from_slice(&va.data()[i * ca..i * ca + ca]);
            data[i * (ca + cb) + ca..(i + 1) * (ca + cb)]
                .copy_from_slice(&vb.data()[i * cb..i * cb + cb]);
        }
        let value = Tensor::matrix(r, ca + cb, data)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Concat(a, b), value, needs))
    }

    /// Columns `[start, start+len)` of a matrix.
    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let va = self.value(a);
        let (r, c) = (va.rows(), va.cols());
        if start + len > c {
            return Err(CoreError::InvalidArgument(format!(
                "slice_cols [{start}, {}) out of bounds for {c} columns",
                start + len
            )));
        }
        let mut data = vec![0.0; r * len];
        for i in 0..r {
            data[i * len..(i + 1) * len].copy_from_slice(&va.data()[i * c + start..i * c + start + len]);
        }
        let value = Tensor::matrix(r, len, data)?;
        let needs = self.needs(a);
        Ok(self.push(Op::SliceCols(a, start, len), value, needs))
    }

    /// Gather the given columns (duplicates allowed): `(r, c) -> (r, idx.len())`.
    pub fn select_cols(&mut self, a: NodeId, idx: &[usize]) -> Result<NodeId> {
        let va = self.value(a);
        let (r, c) = (va.rows(), va.cols());
        if let Some(&bad) = idx.iter().find(|&&j| j >= c) {
            return Err(CoreError::InvalidArgument(format!(
                "select_cols index {bad} out of bounds for {c} columns"
            )));
        }
        let k = idx.len();
        let mut data = vec![0.0; r * k];
        for i in 0..r {
            let row = &va.data()[i * c..i * c + c];
            for (j, &col) in idx.iter().enumerate() {
                data[i * k + j] = row[col];
            }
        }
        let value = Tensor::matrix(r, k, data)?;
        let needs = self.needs(a);
        Ok(self.push(Op::SelectCols(a, idx.to_vec()), value, needs))
    }

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let s: f64 = self.value(a).data().iter().sum();
        let needs = self.needs(a);
        self.push(Op::SumAll(a), Tensor::scalar(s), needs)
    }

    pub fn mean_all(&mut self, a: NodeId) -> NodeId {
        let va = self.value(a);
        let s: f64 = va.data().iter().sum();
        let m = s / va.numel() as f64;
        let needs = self.needs(a);
        self.push(Op::MeanAll(a), Tensor::scalar(m), needs)
    }

    /// Row-wise sum: `(r, c) -> (r, 1)`.
    pub fn sum_last(&mut self, a: NodeId) -> NodeId {
        let va = self.value(a);
        let (r, c) = (va.rows(), va.cols());
        let mut data = vec![0.0; r];
        for i in 0..r {
            data[i] = va.data()[i * c..i * c + c].iter().sum();
        }
        let needs = self.needs(a);
        self.push(
            Op::SumLast(a),
            Tensor::matrix(r, 1, data).expect("shape"),
            needs,
        )
    }

    /// Row-wise exclusive prefix sum.
    pub fn cumsum_excl_last(&mut self, a: NodeId) -> NodeId {
        let va = self.value(a);
        let (r, c) = (va.rows(), va.cols());
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            let mut acc = 0.0;
            for j in 0..c {
                data[i * c + j] = acc;
                acc += va.data()[i * c + j];
            }
        }
        let needs = self.needs(a);
        self.push(
            Op::CumsumExclLast(a),
            Tensor::matrix(r, c, data).expect("shape"),
            needs,
        )
    }

    /// Stack `times` copies of the whole block.
    pub fn tile_rows(&mut self, a: NodeId, times: usize) -> NodeId {
        let va = self.value(a);
        let (r, c) = (va.rows(), va.cols());
        let mut data = Vec::with_capacity(r * c * times);
        for _ in 0..times {
            data.extend_from_slice(va.data());
        }
        let needs = self.needs(a);
        self.push(
            Op::TileRows(a, times),
            Tensor::matrix(r * times, c, data).expect("shape"),
            needs,
        )
    }

    /// Repeat each row `times` consecutive times.
    pub fn repeat_rows(&mut self, a: NodeId, times: usize) -> NodeId {
        let va = self.value(a);
        let (r, c) = (va.rows(), va.cols());
        let mut data = Vec::with_capacity(r * c * times);
        for i in 0..r {
            let row = &va.data()[i * c..i * c + c];
            for _ in 0..times {
                data.extend_from_slice(row);
            }
        }
        let needs = self.needs(a);
        self.push(
            Op::RepeatRows(a, times),
            Tensor::matrix(r * times, c, data).expect("shape"),
            needs,
        )
    }

    pub fn reshape(&mut self, a: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        let value = self.value(a).clone().reshaped(shape)?;
        let needs = self.needs(a);
        Ok(self.push(Op::Reshape(a), value, needs))
    }

    /// Permute the axes of a rank-3 tensor.
    pub fn permute3(&mut self, a: NodeId, perm: [usize; 3]) -> Result<NodeId> {
        let va = self.value(a);
        if va.shape().len() != 3 {
            return Err(CoreError::InvalidArgument(format!(
                "permute3 needs a rank-3 tensor, got shape {:?}",
                va.shape()
            )));
        }
        {
            let mut seen = [false; 3];
            for &p in &perm {
                if p > 2 || seen[p] {
                    return Err(CoreError::InvalidArgument(format!(
                        "permute3 invalid permutation {perm:?}"
                    )));
                }
                seen[p] = true;
            }
        }
        let dims = [va.shape()[0], va.shape()[1], va.shape()[2]];
        let mut data = vec![0.0; va.numel()];
        permute3_kernel(va.data(), dims, perm, &mut data);
        let value = Tensor::new(vec![dims[perm[0]], dims[perm[1]], dims[perm[2]]], data)?;
        let needs = self.needs(a);
        Ok(self.push(Op::Permute3(a, perm), value, needs))
    }

    /// Weighted gather from a feature table.
    ///
    /// `indices`/`weights` hold `corners` entries per output row; output row
    /// `i` is `Σ_c weights[i*corners+c] · table[indices[i*corners+c], :]`.
    pub fn grid_gather(
        &mut self,
        table: NodeId,
        indices: Vec<u32>,
        weights: Vec<f64>,
        corners: usize,
    ) -> Result<NodeId> {
        let vt = self.value(table);
        let (v, f) = (vt.rows(), vt.cols());
        if indices.len() != weights.len() || corners == 0 || indices.len() % corners != 0 {
            return Err(CoreError::InvalidArgument(format!(
                "grid_gather: {} indices, {} weights, {corners} corners",
                indices.len(),
                weights.len()
            )));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i as usize >= v) {
            return Err(CoreError::InvalidArgument(format!(
                "grid_gather index {bad} out of bounds for {v} vertices"
            )));
        }
        let rows = indices.len() / corners;
        let mut data = vec![0.0; rows * f];
        let td = vt.data();
        for i in 0..rows {
            let out = &mut data[i * f..(i + 1) * f];
            for c in 0..corners {
                let w = weights[i * corners + c];
                let row = &td[indices[i * corners + c] as usize * f..][..f];
                for (o, &tv) in out.iter_mut().zip(row) {
                    *o += w * tv;
                }
            }
        }
        let value = Tensor::matrix(rows, f, data)?;
        let needs = self.needs(table);
        Ok(self.push(
            Op::GridGather {
                table,
                indices,
                weights,
                corners,
            },
            value,
            needs,
        ))
    }

    /// Per output element `(i, j)`, the sum of input columns
    /// `spans[i*out_cols+j].0 .. spans[i*out_cols+j].1` of row `i`.
    pub fn overlap_bound(
        &mut self,
        weights: NodeId,
        spans: Vec<(u32, u32)>,
        out_cols: usize,
    ) -> Result<NodeId> {
        let vw = self.value(weights);
        let (r, c) = (vw.rows(), vw.cols());
        if spans.len() != r * out_cols {
            return Err(CoreError::InvalidArgument(format!(
                "overlap_bound: {} spans for {r} rows x {out_cols} bins",
                spans.len()
            )));
        }
        if let Some(&(s, e)) = spans.iter().find(|&&(s, e)| s > e || e as usize > c) {
            return Err(CoreError::InvalidArgument(format!(
                "overlap_bound span ({s}, {e}) out of bounds for {c} columns"
            )));
        }
        let mut data = vec![0.0; r * out_cols];
        let wd = vw.data();
        for i in 0..r {
            for j in 0..out_cols {
                let (s, e) = spans[i * out_cols + j];
                data[i * out_cols + j] = wd[i * c + s as usize..i * c + e as usize].iter().sum();
            }
        }
        let value = Tensor::matrix(r, out_cols, data)?;
        let needs = self.needs(weights);
        Ok(self.push(
            Op::OverlapBound {
                weights,
                spans,
                out_cols,
            },
            value,
            needs,
        ))
    }

    // -----------------------------------------------------------------------

    /// Reverse sweep from a scalar loss node.
    ///
    /// Returns the gradient of the loss w.r.t. every trainable leaf that the
    /// loss depends on; unreachable leaves report `None` (an exact zero).
    pub fn backward(&self, root: NodeId) -> Result<Gradients> {
        if !self.value(root).is_scalar() {
            return Err(CoreError::InvalidArgument(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.value(root).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        if self.needs(root) {
            grads[root.0] = Some(vec![1.0]);
        }
        for i in (0..=root.0).rev() {
            if matches!(self.nodes[i].op, Op::Leaf) {
                continue; // keep leaf gradients for the caller
            }
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            self.propagate(i, &g, &mut grads);
        }
        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| {
                g.map(|data| {
                    Tensor::new(self.nodes[i].value.shape().to_vec(), data).expect("grad shape")
                })
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn accumulate<'a>(
        &self,
        grads: &'a mut [Option<Vec<f64>>],
        id: NodeId,
    ) -> Option<&'a mut [f64]> {
        if !self.needs(id) {
            return None;
        }
        let numel = self.nodes[id.0].value.numel();
        Some(grads[id.0].get_or_insert_with(|| vec![0.0; numel]).as_mut_slice())
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if let Some(da) = self.accumulate(grads, *a) {
                    for (d, &gv) in da.iter_mut().zip(g) {
                        *d += gv;
                    }
                }
                if let Some(db) = self.accumulate(grads, *b) {
                    for (d, &gv) in db.iter_mut().zip(g) {
                        *d += gv;
                    }
                }
            }
            Op::Sub(a, b) => {
                if let Some(da) = self.accumulate(grads, *a) {
                    for (d, &gv) in da.iter_mut().zip(g) {
                        *d += gv;
                    }
                }
                if let Some(db) = self.accumulate(grads, *b) {
                    for (d, &gv) in db.iter_mut().zip(g) {
                        *d -= gv;
                    }
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                if let Some(da) = self.accumulate(grads, *a) {
                    for ((d, &gv), &bv) in da.iter_mut().zip(g).zip(vb) {
                        *d += gv * bv;
                    }
                }
                if let Some(db) = self.accumulate(grads, *b) {
                    for ((d, &gv), &av) in db.iter_mut().zip(g).zip(va) {
                        *d += gv * av;
                    }
                }
            }
            Op::Div(a, b) => {
                let vb = self.value(*b).data();
                let y = self.nodes[i].value.data();
                if let Some(da) = self.accumulate(grads, *a) {
                    for ((d, &gv), &bv) in da.iter_mut().zip(g).zip(vb) {
                        *d += gv / bv;
                    }
                }
                if let Some(db) = self.accumulate(grads, *b) {
                    for (((d, &gv), &bv), &yv) in db.iter_mut().zip(g).zip(vb).zip(y) {
                        *d -= gv * yv / bv;
                    }
                }
            }
            Op::Neg(a) => {
                if let Some(da) = self.accumulate(grads, *a) {
                    for (d, &gv) in da.iter_mut().zip(g) {
                        *d -= gv;
                    }
                }
            }
            Op::AddScalar(a, _) => {
                if let Some(da) = self.accumulate(grads, *a) {
                    for (d, &gv) in da.iter_mut().zip(g) {
                        *d += gv;
                    }
                }
            }
            Op::MulScalar(a, s) => {
                let s = *s;
                if let Some(da) = self.accumulate(grads, *a) {
                    for (d, &gv) in da.iter_mut().zip(g) {
                        *d += gv * s;
                    }
                }
            }
            Op::AddRow(x, bias) => {
                let c = self.value(*bias).numel();
                if let Some(dx) = self.accumulate(grads, *x) {
                    for (d, &gv) in dx.iter_mut().zip(g) {
                        *d += gv;
                    }
                }
                if let Some(db) = self.accumulate(grads, *bias) {
                    for (row, chunk) in g.chunks_exact(c).enumerate() {
                        let _ = row;
                        for (d, &gv) in db.iter_mut().zip(chunk) {
                            *d += gv;
                        }
                    }
                }
            }
            Op::MatMul(a, b) => {
                let va = self.value(*a);
                let vb = self.value(*b);
                let (m, k) = (va.rows(), va.cols());
                let n = vb.cols();
                if self.needs(*a) {
                    // dA = g · Bᵀ; transpose B (small) so the product stays
                    // in the vector-friendly NN form.
                    let bt = transpose(vb.data(), k, n);
                    let mut da_local = vec![0.0; m * k];
                    matmul_nn(g, &bt, m, n, k, &mut da_local);
                    if let Some(da) = self.accumulate(grads, *a) {
                        for (d, &v) in da.iter_mut().zip(&da_local) {
                            *d += v;
                        }
                    }
                }
                if self.needs(*b) {
                    let va_data = va.data();
                    if let Some(db) = self.accumulate(grads, *b) {
                        matmul_tn(va_data, g, m, k, n, db);
                    }
                }
            }
            Op::Relu(a) => {
                let x = self.value(*a).data();
                if let Some(da) = self.accumulate(grads, *a) {
                    for ((d, &gv), &xv) in da.iter_mut().zip(g).zip(x) {
                        if xv > 0.0 {
                            *d += gv;
                        }
                    }
                }
            }
            Op::Sigmoid(a) => {
                let y = self.nodes[i].value.data();
                if let Some(da) = self.accumulate(grads, *a) {
                    for ((d, &gv), &yv) in da.iter_mut().zip(g).zip(y) {
                        *d += gv * yv * (1.0 - yv);
                    }
                }
            }
            Op::Exp(a) => {
                let y = self.nodes[i].value.data();
                if let Some(da) = self.accumulate(grads, *a) {
                    for ((d, &gv), &yv) in da.iter_mut().zip(g).zip(y) {
                        *d += gv * yv;
                    }
                }
            }
            Op::SoftplusShifted(a) => {
                let x = self.value(*a).data();
                if let Some(da) = self.accumulate(grads, *a) {
                    for ((d, &gv), &xv) in da.iter_mut().zip(g).zip(x) {
                        *d += gv * math::softplus_shifted_deriv(xv);
                    }
                }
            }
            Op::Concat(a, b) => {
                let ca = self.value(*a).cols();
                let cb = self.value(*b).cols();
                let c = ca + cb;
                if let Some(da) = self.accumulate(grads, *a) {
                    for (row, chunk) in g.chunks_exact(c).enumerate() {
                        for (d, &gv) in da[row * ca..(row + 1) * ca].iter_mut().zip(&chunk[..ca]) {
                            *d += gv;
                        }
                    }
                }
                if let Some(db) = self.accumulate(grads, *b) {
                    for (row, chunk) in g.chunks_exact(c).enumerate() {
                        for (d, &gv) in db[row * cb..(row + 1) * cb].iter_mut().zip(&chunk[ca..]) {
                            *d += gv;
                        }
                    }
                }
            }
            Op::SliceCols(a, start, len) => {
                let c = self.value(*a).cols();
                if let Some(da) = self.accumulate(grads, *a) {
                    for (row, chunk) in g.chunks_exact(*len).enumerate() {
                        for (d, &gv) in da[row * c + start..row * c + start + len]
                            .iter_mut()
                            .zip(chunk)
                        {
                            *d += gv;
                        }
                    }
                }
            }
            Op::SelectCols(a, idx) => {
                let c = self.value(*a).cols();
                if let Some(da) = self.accumulate(grads, *a) {
                    for (row, chunk) in g.chunks_exact(idx.len()).enumerate() {
                        for (&col, &gv) in idx.iter().zip(chunk) {
                            da[row * c + col] += gv;
                        }
                    }
                }
            }
            Op::SumAll(a) => {
                let gv = g[0];
                if let Some(da) = self.accumulate(grads, *a) {
                    for d in da.iter_mut() {
                        *d += gv;
                    }
                }
            }
            Op::MeanAll(a) => {
                let gv = g[0] / self.value(*a).numel() as f64;
                if let Some(da) = self.accumulate(grads, *a) {
                    for d in da.iter_mut() {
                        *d += gv;
                    }
                }
            }
            Op::SumLast(a) => {
                let c = self.value(*a).cols();
                if let Some(da) = self.accumulate(grads, *a) {
                    for (row, &gv) in g.iter().enumerate() {
                        for d in da[row * c..(row + 1) * c].iter_mut() {
                            *d += gv;
                        }
                    }
                }
            }
            Op::CumsumExclLast(a) => {
                // y[i,j] = Σ_{j'<j} x[i,j']  ⇒  dx[i,j] = Σ_{j'>j} g[i,j'].
                let c = self.value(*a).cols();
                if let Some(da) = self.accumulate(grads, *a) {
                    for (row, chunk) in g.chunks_exact(c).enumerate() {
                        let mut acc = 0.0;
                        for j in (0..c).rev() {
                            da[row * c + j] += acc;
                            acc += chunk[j];
                        }
                    }
                }
            }
            Op::TileRows(a, times) => {
                let numel = self.value(*a).numel();
                if let Some(da) = self.accumulate(grads, *a) {
                    for t in 0..*times {
                        for (d, &gv) in da.iter_mut().zip(&g[t * numel..(t + 1) * numel]) {
                            *d += gv;
                        }
                    }
                }
            }
            Op::RepeatRows(a, times) => {
                let va = self.value(*a);
                let (r, c) = (va.rows(), va.cols());
                if let Some(da) = self.accumulate(grads, *a) {
                    for row in 0..r {
                        for t in 0..*times {
                            let src = &g[(row * times + t) * c..(row * times + t + 1) * c];
                            for (d, &gv) in da[row * c..(row + 1) * c].iter_mut().zip(src) {
                                *d += gv;
                            }
                        }
                    }
                }
            }
            Op::Reshape(a) => {
                if let Some(da) = self.accumulate(grads, *a) {
                    for (d, &gv) in da.iter_mut().zip(g) {
                        *d += gv;
                    }
                }
            }
            Op::Permute3(a, perm) => {
                let out_dims = {
                    let s = self.nodes[i].value.shape();
                    [s[0], s[1], s[2]]
                };
                let mut inv = [0usize; 3];
                for (k, &p) in perm.iter().enumerate() {
                    inv[p] = k;
                }
                let mut scratch = vec![0.0; g.len()];
                permute3_kernel(g, out_dims, inv, &mut scratch);
                if let Some(da) = self.accumulate(grads, *a) {
                    for (d, &gv) in da.iter_mut().zip(&scratch) {
                        *d += gv;
                    }
                }
            }
            Op::GridGather {
                table,
                indices,
                weights,
                corners,
            } => {
                let f = self.value(*table).cols();
                if let Some(dt) = self.accumulate(grads, *table) {
                    let rows = indices.len() / corners;
                    for row in 0..rows {
                        let grow = &g[row * f..(row + 1) * f];
                        for c in 0..*corners {
                            let w = weights[row * corners + c];
                            let base = indices[row * corners + c] as usize * f;
                            for (d, &gv) in dt[base..base + f].iter_mut().zip(grow) {
                                *d += w * gv;
                            }
                        }
                    }
                }
            }
            Op::OverlapBound {
                weights,
                spans,
                out_cols,
            } => {
                let c = self.value(*weights).cols();
                if let Some(dw) = self.accumulate(grads, *weights) {
                    let rows = spans.len() / out_cols;
                    for row in 0..rows {
                        for j in 0..*out_cols {
                            let (s, e) = spans[row * out_cols + j];
                            let gv = g[row * out_cols + j];
                            for d in dw[row * c + s as usize..row * c + e as usize].iter_mut() {
                                *d += gv;
                            }
                        }
                    }
                }
            }
        }
    }
}
