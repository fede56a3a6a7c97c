//! Reverse-mode automatic differentiation over matrix-valued nodes.
//!
//! A [`Graph`] records one forward evaluation. Nodes are appended in
//! evaluation order, so parents always precede children and the node list is
//! already a topological order; [`Graph::backward`] walks it in reverse.
//!
//! Leaves may borrow their value (parameters are never copied into the graph).

use std::borrow::Cow;

use super::matrix::{matmul_a_bt_acc, matmul_acc, matmul_at_b_acc, softmax_in_place, Matrix};
use crate::error::{HainError, Result};

/// Lower clamp applied by [`Graph::ln`].
pub const LN_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    MatMulBt(NodeId, NodeId),
    Add(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    ScaleRows(NodeId, NodeId),
    DivScalar(NodeId, NodeId),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Relu(NodeId),
    Ln(NodeId),
    XLogX(NodeId),
    SoftmaxRows(NodeId),
    SegmentSoftmax(NodeId, usize),
    SegmentSum(NodeId, usize),
    SegmentBroadcast(NodeId, usize),
    SumAll(NodeId),
    Transpose(NodeId),
    ConcatCols(NodeId, NodeId),
    Pick(NodeId, usize, usize),
}

struct Node<'a> {
    op: Op,
    value: Cow<'a, Matrix>,
    requires_grad: bool,
}

/// Computation graph for a single forward/backward episode.
#[derive(Default)]
pub struct Graph<'a> {
    nodes: Vec<Node<'a>>,
}

/// Adjoints produced by [`Graph::backward`], indexed by node.
pub struct Gradients {
    adjoints: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Matrix> {
        self.adjoints.get(id.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, id: NodeId) -> Option<Matrix> {
        self.adjoints.get_mut(id.0).and_then(Option::take)
    }
}

fn segments(n: usize, size: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..n).step_by(size.max(1)).map(move |s| (s, (s + size).min(n)))
}

impl<'a> Graph<'a> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Matrix {
        &self.nodes[id.0].value
    }

    /// Floats held by nodes the graph owns; borrowed leaves are excluded.
    pub fn footprint(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n.value, Cow::Owned(_)))
            .map(|n| n.value.len())
            .sum()
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Leaf holding a borrowed value.
    pub fn leaf(&mut self, value: &'a Matrix, requires_grad: bool) -> NodeId {
        self.push_leaf(Cow::Borrowed(value), requires_grad)
    }

    /// Leaf owning its value.
    pub fn leaf_owned(&mut self, value: Matrix, requires_grad: bool) -> NodeId {
        self.push_leaf(Cow::Owned(value), requires_grad)
    }

    pub fn constant(&mut self, value: Matrix) -> NodeId {
        self.leaf_owned(value, false)
    }

    fn push_leaf(&mut self, value: Cow<'a, Matrix>, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            op: Op::Leaf,
            value,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn push(&mut self, op: Op, value: Matrix, parents: &[NodeId]) -> NodeId {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            op,
            value: Cow::Owned(value),
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn shape(&self, id: NodeId) -> (usize, usize) {
        self.nodes[id.0].value.shape()
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.push(Op::MatMul(a, b), v, &[a, b]))
    }

    /// `a * b^T`.
    pub fn matmul_bt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).matmul_transposed(self.value(b))?;
        Ok(self.push(Op::MatMulBt(a, b), v, &[a, b]))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        Ok(self.push(Op::Add(a, b), v, &[a, b]))
    }

    /// Adds the `1 x c` row `row` to every row of `a`.
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        let (r, c) = self.shape(a);
        if self.shape(row) != (1, c) {
            return Err(HainError::shape(format!(
                "row broadcast of {:?} onto {r}x{c}",
                self.shape(row)
            )));
        }
        let mut v = self.value(a).clone();
        let bias = self.value(row).data().to_vec();
        for i in 0..r {
            for (x, b) in v.row_mut(i).iter_mut().zip(&bias) {
                *x += b;
            }
        }
        Ok(self.push(Op::AddRow(a, row), v, &[a, row]))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        Ok(self.push(Op::Sub(a, b), v, &[a, b]))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        Ok(self.push(Op::Mul(a, b), v, &[a, b]))
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        let v = self.value(a).map(|x| x * factor);
        self.push(Op::Scale(a, factor), v, &[a])
    }

    /// Multiplies row `i` of `m` by `v[i]`, where `v` is an `n x 1` column.
    pub fn scale_rows(&mut self, v: NodeId, m: NodeId) -> Result<NodeId> {
        let (n, c) = self.shape(m);
        if self.shape(v) != (n, 1) {
            return Err(HainError::shape(format!(
                "row scaling by {:?} of {n}x{c}",
                self.shape(v)
            )));
        }
        let mut out = self.value(m).clone();
        for i in 0..n {
            let s = self.value(v).data()[i];
            for x in out.row_mut(i) {
                *x *= s;
            }
        }
        Ok(self.push(Op::ScaleRows(v, m), out, &[v, m]))
    }

    /// Divides every entry of `a` by the `1 x 1` node `s`.
    pub fn div_scalar(&mut self, a: NodeId, s: NodeId) -> Result<NodeId> {
        let denom = self
            .value(s)
            .item()
            .ok_or_else(|| HainError::shape("divisor must be 1x1"))?;
        let v = self.value(a).map(|x| x / denom);
        Ok(self.push(Op::DivScalar(a, s), v, &[a, s]))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(f64::tanh);
        self.push(Op::Tanh(a), v, &[a])
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(sigmoid);
        self.push(Op::Sigmoid(a), v, &[a])
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push(Op::Relu(a), v, &[a])
    }

    /// `ln(max(x, 1e-12))`; the gradient is zero where the floor is active.
    pub fn ln(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| x.max(LN_FLOOR).ln());
        self.push(Op::Ln(a), v, &[a])
    }

    /// `x ln x` with `0 ln 0 = 0`.
    pub fn xlogx(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(xlogx);
        self.push(Op::XLogX(a), v, &[a])
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).softmax_rows();
        self.push(Op::SoftmaxRows(a), v, &[a])
    }

    /// Row softmax restricted to entries where `mask` (row-major, same shape)
    /// is true. Every row must permit at least one entry.
    pub fn masked_softmax_rows(&mut self, a: NodeId, mask: Vec<bool>) -> Result<NodeId> {
        let (r, c) = self.shape(a);
        if mask.len() != r * c {
            return Err(HainError::shape(format!(
                "mask of {} entries for {r}x{c} scores",
                mask.len()
            )));
        }
        let mut v = self.value(a).clone();
        for i in 0..r {
            if !softmax_in_place(v.row_mut(i), Some(&mask[i * c..(i + 1) * c])) {
                return Err(HainError::contract(format!("attention row {i} is fully masked")));
            }
        }
        Ok(self.push(Op::SoftmaxRows(a), v, &[a]))
    }

    /// Softmax of an `n x 1` column within contiguous segments of `size`
    /// (the last segment may be shorter).
    pub fn segment_softmax(&mut self, a: NodeId, size: usize) -> Result<NodeId> {
        let (n, c) = self.shape(a);
        if c != 1 || size == 0 {
            return Err(HainError::shape(format!(
                "segment softmax needs an n x 1 column and positive size, got {n}x{c}, size {size}"
            )));
        }
        let mut v = self.value(a).clone();
        for (s, e) in segments(n, size) {
            softmax_in_place(&mut v.data_mut()[s..e], None);
        }
        Ok(self.push(Op::SegmentSoftmax(a, size), v, &[a]))
    }

    /// Sums contiguous row segments of `size`: `n x c` to `ceil(n/size) x c`.
    pub fn segment_sum(&mut self, a: NodeId, size: usize) -> Result<NodeId> {
        if size == 0 {
            return Err(HainError::shape("segment size must be positive"));
        }
        let (n, c) = self.shape(a);
        let groups = n.div_ceil(size);
        let mut out = Matrix::zeros(groups, c);
        let src = self.value(a);
        for (g, (s, e)) in segments(n, size).enumerate() {
            for i in s..e {
                for (o, x) in out.row_mut(g).iter_mut().zip(src.row(i)) {
                    *o += x;
                }
            }
        }
        Ok(self.push(Op::SegmentSum(a, size), out, &[a]))
    }

    /// Repeats row `g` of a `G x c` matrix over segment `g` of an `n`-row
    /// output. The adjoint of [`Graph::segment_sum`].
    pub fn segment_broadcast(&mut self, a: NodeId, size: usize, n: usize) -> Result<NodeId> {
        let (g, c) = self.shape(a);
        if size == 0 || n.div_ceil(size) != g {
            return Err(HainError::shape(format!(
                "cannot broadcast {g} segments of size {size} over {n} rows"
            )));
        }
        let mut out = Matrix::zeros(n, c);
        let src = self.value(a);
        for (k, (s, e)) in segments(n, size).enumerate() {
            for i in s..e {
                out.row_mut(i).copy_from_slice(src.row(k));
            }
        }
        Ok(self.push(Op::SegmentBroadcast(a, size), out, &[a]))
    }

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let v = Matrix::scalar(self.value(a).sum());
        self.push(Op::SumAll(a), v, &[a])
    }

    pub fn mean_all(&mut self, a: NodeId) -> NodeId {
        let n = self.value(a).len().max(1);
        let s = self.sum_all(a);
        self.scale(s, 1.0 / n as f64)
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).transpose();
        self.push(Op::Transpose(a), v, &[a])
    }

    /// `[a | b]` for matrices with equal row counts.
    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ra, ca) = self.shape(a);
        let (rb, cb) = self.shape(b);
        if ra != rb {
            return Err(HainError::shape(format!("column concat of {ra}x{ca} and {rb}x{cb}")));
        }
        let mut out = Matrix::zeros(ra, ca + cb);
        for i in 0..ra {
            out.row_mut(i)[..ca].copy_from_slice(self.value(a).row(i));
            out.row_mut(i)[ca..].copy_from_slice(self.value(b).row(i));
        }
        Ok(self.push(Op::ConcatCols(a, b), out, &[a, b]))
    }

    /// `1 x 1` node holding entry `(r, c)` of `a`.
    pub fn pick(&mut self, a: NodeId, r: usize, c: usize) -> Result<NodeId> {
        let (rows, cols) = self.shape(a);
        if r >= rows || c >= cols {
            return Err(HainError::shape(format!("pick ({r}, {c}) out of {rows}x{cols}")));
        }
        let v = Matrix::scalar(self.value(a).get(r, c));
        Ok(self.push(Op::Pick(a, r, c), v, &[a]))
    }

    /// Reverse sweep from a scalar node. Only nodes that require gradients
    /// and are reachable from `loss` receive an adjoint.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        if self.shape(loss) != (1, 1) {
            return Err(HainError::contract(format!(
                "backward needs a scalar loss, node has shape {:?}",
                self.shape(loss)
            )));
        }
        let mut adj: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        adj[loss.0] = Some(Matrix::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let Some(upstream) = adj[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            self.propagate(&node.op, &node.value, &upstream, &mut adj);
            adj[idx] = Some(upstream);
        }
        for (node, a) in self.nodes.iter().zip(adj.iter_mut()) {
            if !node.requires_grad {
                *a = None;
            }
        }
        Ok(Gradients { adjoints: adj })
    }

    fn accumulate(&self, adj: &mut [Option<Matrix>], target: NodeId, build: impl FnOnce(&mut Matrix)) {
        if !self.nodes[target.0].requires_grad {
            return;
        }
        let slot = &mut adj[target.0];
        if slot.is_none() {
            let (r, c) = self.shape(target);
            *slot = Some(Matrix::zeros(r, c));
        }
        build(slot.as_mut().expect("slot initialized"));
    }

    fn propagate(&self, op: &Op, out: &Matrix, up: &Matrix, adj: &mut [Option<Matrix>]) {
        match *op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                // dA += up * B^T, dB += A^T * up
                let (va, vb) = (self.value(a), self.value(b));
                self.accumulate(adj, a, |g| matmul_a_bt_acc(up, vb, g));
                self.accumulate(adj, b, |g| matmul_at_b_acc(va, up, g));
            }
            Op::MatMulBt(a, b) => {
                // out = A B^T: dA += up * B, dB += up^T * A
                let (va, vb) = (self.value(a), self.value(b));
                self.accumulate(adj, a, |g| matmul_acc(up, vb, g));
                self.accumulate(adj, b, |g| matmul_at_b_acc(up, va, g));
            }
            Op::Add(a, b) => {
                self.accumulate(adj, a, |g| g.add_assign(up));
                self.accumulate(adj, b, |g| g.add_assign(up));
            }
            Op::AddRow(a, row) => {
                self.accumulate(adj, a, |g| g.add_assign(up));
                self.accumulate(adj, row, |g| {
                    for i in 0..up.rows() {
                        for (x, u) in g.data_mut().iter_mut().zip(up.row(i)) {
                            *x += u;
                        }
                    }
                });
            }
            Op::Sub(a, b) => {
                self.accumulate(adj, a, |g| g.add_assign(up));
                self.accumulate(adj, b, |g| {
                    for (x, u) in g.data_mut().iter_mut().zip(up.data()) {
                        *x -= u;
                    }
                });
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(a), self.value(b));
                self.accumulate(adj, a, |g| {
                    for ((x, u), y) in g.data_mut().iter_mut().zip(up.data()).zip(vb.data()) {
                        *x += u * y;
                    }
                });
                self.accumulate(adj, b, |g| {
                    for ((x, u), y) in g.data_mut().iter_mut().zip(up.data()).zip(va.data()) {
                        *x += u * y;
                    }
                });
            }
            Op::Scale(a, f) => {
                self.accumulate(adj, a, |g| {
                    for (x, u) in g.data_mut().iter_mut().zip(up.data()) {
                        *x += u * f;
                    }
                });
            }
            Op::ScaleRows(v, m) => {
                let (vv, vm) = (self.value(v), self.value(m));
                self.accumulate(adj, v, |g| {
                    for i in 0..vm.rows() {
                        g.data_mut()[i] += up.row(i).iter().zip(vm.row(i)).map(|(u, x)| u * x).sum::<f64>();
                    }
                });
                self.accumulate(adj, m, |g| {
                    for i in 0..vm.rows() {
                        let s = vv.data()[i];
                        for (x, u) in g.row_mut(i).iter_mut().zip(up.row(i)) {
                            *x += u * s;
                        }
                    }
                });
            }
            Op::DivScalar(a, s) => {
                let denom = self.value(s).data()[0];
                self.accumulate(adj, a, |g| {
                    for (x, u) in g.data_mut().iter_mut().zip(up.data()) {
                        *x += u / denom;
                    }
                });
                // d(a/s)/ds = -a/s^2 = -out/s
                self.accumulate(adj, s, |g| {
                    let t: f64 = up.data().iter().zip(out.data()).map(|(u, o)| u * o).sum();
                    g.data_mut()[0] -= t / denom;
                });
            }
            Op::Tanh(a) => self.accumulate(adj, a, |g| {
                for ((x, u), y) in g.data_mut().iter_mut().zip(up.data()).zip(out.data()) {
                    *x += u * (1.0 - y * y);
                }
            }),
            Op::Sigmoid(a) => self.accumulate(adj, a, |g| {
                for ((x, u), y) in g.data_mut().iter_mut().zip(up.data()).zip(out.data()) {
                    *x += u * y * (1.0 - y);
                }
            }),
            Op::Relu(a) => {
                let va = self.value(a);
                self.accumulate(adj, a, |g| {
                    for ((x, u), v) in g.data_mut().iter_mut().zip(up.data()).zip(va.data()) {
                        if *v > 0.0 {
                            *x += u;
                        }
                    }
                });
            }
            Op::Ln(a) => {
                let va = self.value(a);
                self.accumulate(adj, a, |g| {
                    for ((x, u), v) in g.data_mut().iter_mut().zip(up.data()).zip(va.data()) {
                        if *v > LN_FLOOR {
                            *x += u / v;
                        }
                    }
                });
            }
            Op::XLogX(a) => {
                let va = self.value(a);
                self.accumulate(adj, a, |g| {
                    for ((x, u), v) in g.data_mut().iter_mut().zip(up.data()).zip(va.data()) {
                        if *v > 0.0 {
                            *x += u * (v.ln() + 1.0);
                        }
                    }
                });
            }
            Op::SoftmaxRows(a) => self.accumulate(adj, a, |g| {
                // Masked entries have out = 0 and therefore zero gradient.
                for i in 0..out.rows() {
                    softmax_backward(out.row(i), up.row(i), g.row_mut(i));
                }
            }),
            Op::SegmentSoftmax(a, size) => self.accumulate(adj, a, |g| {
                for (s, e) in segments(out.rows(), size) {
                    softmax_backward(&out.data()[s..e], &up.data()[s..e], &mut g.data_mut()[s..e]);
                }
            }),
            Op::SegmentSum(a, size) => self.accumulate(adj, a, |g| {
                for (k, (s, e)) in segments(g.rows(), size).enumerate() {
                    for i in s..e {
                        for (x, u) in g.row_mut(i).iter_mut().zip(up.row(k)) {
                            *x += u;
                        }
                    }
                }
            }),
            Op::SegmentBroadcast(a, size) => self.accumulate(adj, a, |g| {
                for (k, (s, e)) in segments(up.rows(), size).enumerate() {
                    for i in s..e {
                        for (x, u) in g.row_mut(k).iter_mut().zip(up.row(i)) {
                            *x += u;
                        }
                    }
                }
            }),
            Op::SumAll(a) => {
                let u = up.data()[0];
                self.accumulate(adj, a, |g| {
                    for x in g.data_mut() {
                        *x += u;
                    }
                });
            }
            Op::Transpose(a) => self.accumulate(adj, a, |g| g.add_assign(&up.transpose())),
            Op::ConcatCols(a, b) => {
                let ca = self.shape(a).1;
                self.accumulate(adj, a, |g| {
                    for i in 0..up.rows() {
                        for (x, u) in g.row_mut(i).iter_mut().zip(&up.row(i)[..ca]) {
                            *x += u;
                        }
                    }
                });
                self.accumulate(adj, b, |g| {
                    for i in 0..up.rows() {
                        for (x, u) in g.row_mut(i).iter_mut().zip(&up.row(i)[ca..]) {
                            *x += u;
                        }
                    }
                });
            }
            Op::Pick(a, r, c) => {
                let u = up.data()[0];
                self.accumulate(adj, a, |g| {
                    let v = g.get(r, c);
                    g.set(r, c, v + u);
                });
            }
        }
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

#[inline]
pub(crate) fn xlogx(x: f64) -> f64 {
    if x > 0.0 {
        x * x.ln()
    } else {
        0.0
    }
}

/// `g += J^T up` for `y = softmax(x)`: `g_i += y_i (up_i - <up, y>)`.
fn softmax_backward(y: &[f64], up: &[f64], g: &mut [f64]) {
    let inner: f64 = y.iter().zip(up).map(|(a, b)| a * b).sum();
    for ((x, yi), ui) in g.iter_mut().zip(y).zip(up) {
        *x += yi * (ui - inner);
    }
}
