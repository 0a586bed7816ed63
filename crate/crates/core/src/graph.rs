//! Reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Graph`] is a tape: every operation appends a node holding its value and
//! enough information to propagate gradients back to its inputs. Parameters
//! are read from a borrowed [`ParamStore`] and their gradients are collected
//! into [`ParamGrads`] by [`Graph::backward`].

use crate::params::{ParamGrads, ParamId, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Clone, Debug)]
enum Op {
    Constant,
    Variable,
    Param(ParamId),
    MatMul(NodeId, NodeId),
    /// `a · bᵀ`
    MatMulT(NodeId, NodeId),
    /// Elementwise add; `b` may be a single row broadcast over the rows of `a`.
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    /// Elementwise product; `b` may be a single row broadcast over the rows of `a`.
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Sigmoid(NodeId),
    Tanh(NodeId),
    ConcatCols(Vec<NodeId>),
    StackRows(Vec<NodeId>),
    SliceCols(NodeId, usize),
    Rows(NodeId, usize),
    Gather(NodeId, Vec<usize>),
    MeanRows(NodeId),
    SumAll(NodeId),
    Softmax(NodeId),
    LogSoftmax(NodeId),
    Pick(NodeId, usize, usize),
    PickSum(NodeId, Vec<(usize, usize)>),
    Transpose(NodeId),
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: Option<Tensor>,
    needs_grad: bool,
}

pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_nodes: Vec<Option<NodeId>>,
}

/// Gradients of a scalar with respect to every node that required one.
pub struct Gradients {
    nodes: Vec<Option<Tensor>>,
    params: ParamGrads,
}

impl Gradients {
    pub fn wrt(&self, node: NodeId) -> Option<&Tensor> {
        self.nodes[node.0].as_ref()
    }

    pub fn params(&self) -> &ParamGrads {
        &self.params
    }

    pub fn into_params(self) -> ParamGrads {
        self.params
    }
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self { params, nodes: Vec::new(), param_nodes: vec![None; params.len()] }
    }

    pub fn store(&self) -> &'p ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        let node = &self.nodes[id.0];
        match (&node.op, &node.value) {
            (Op::Param(pid), _) => self.params.get(*pid),
            (_, Some(v)) => v,
            _ => unreachable!("node without value"),
        }
    }

    pub fn shape(&self, id: NodeId) -> (usize, usize) {
        self.value(id).shape()
    }

    /// Reads a `1 × 1` node.
    pub fn scalar(&self, id: NodeId) -> f64 {
        let v = self.value(id);
        debug_assert_eq!(v.shape(), (1, 1));
        v.data()[0]
    }

    fn push(&mut self, op: Op, value: Tensor, needs_grad: bool) -> NodeId {
        self.nodes.push(Node { op, value: Some(value), needs_grad });
        NodeId(self.nodes.len() - 1)
    }

    fn ng(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|i| self.nodes[i.0].needs_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Constant, value, false)
    }

    /// A leaf whose gradient is tracked (used for gradient checks on inputs).
    pub fn variable(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Variable, value, true)
    }

    pub fn param(&mut self, pid: ParamId) -> NodeId {
        if let Some(id) = self.param_nodes[pid.0] {
            return id;
        }
        self.nodes.push(Node { op: Op::Param(pid), value: None, needs_grad: true });
        let id = NodeId(self.nodes.len() - 1);
        self.param_nodes[pid.0] = Some(id);
        id
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).matmul(self.value(b));
        let ng = self.ng(&[a, b]);
        self.push(Op::MatMul(a, b), v, ng)
    }

    pub fn matmul_t(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).matmul_t(self.value(b));
        let ng = self.ng(&[a, b]);
        self.push(Op::MatMulT(a, b), v, ng)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (self.value(a), self.value(b));
        let v = broadcast_binary(va, vb, |x, y| x + y);
        let ng = self.ng(&[a, b]);
        self.push(Op::Add(a, b), v, ng)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "sub shape mismatch");
        let v = broadcast_binary(va, vb, |x, y| x - y);
        let ng = self.ng(&[a, b]);
        self.push(Op::Sub(a, b), v, ng)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (self.value(a), self.value(b));
        let v = broadcast_binary(va, vb, |x, y| x * y);
        let ng = self.ng(&[a, b]);
        self.push(Op::Mul(a, b), v, ng)
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> NodeId {
        let v = self.value(a).map(|x| x * s);
        let ng = self.ng(&[a]);
        self.push(Op::Scale(a, s), v, ng)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(sigmoid);
        let ng = self.ng(&[a]);
        self.push(Op::Sigmoid(a), v, ng)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(f64::tanh);
        let ng = self.ng(&[a]);
        self.push(Op::Tanh(a), v, ng)
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty());
        if parts.len() == 1 {
            return parts[0];
        }
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut out = Tensor::zeros(rows, cols);
        for r in 0..rows {
            let mut offset = 0;
            for p in parts {
                let v = self.value(*p);
                assert_eq!(v.rows(), rows, "concat_cols row mismatch");
                out.row_mut(r)[offset..offset + v.cols()].copy_from_slice(v.row(r));
                offset += v.cols();
            }
        }
        let ng = self.ng(parts);
        self.push(Op::ConcatCols(parts.to_vec()), out, ng)
    }

    pub fn stack_rows(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty());
        if parts.len() == 1 {
            return parts[0];
        }
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            let v = self.value(*p);
            assert_eq!(v.cols(), cols, "stack_rows col mismatch");
            data.extend_from_slice(v.data());
            rows += v.rows();
        }
        let ng = self.ng(parts);
        self.push(Op::StackRows(parts.to_vec()), Tensor::from_vec(rows, cols, data), ng)
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> NodeId {
        let va = self.value(a);
        assert!(start + len <= va.cols());
        let mut out = Tensor::zeros(va.rows(), len);
        for r in 0..va.rows() {
            out.row_mut(r).copy_from_slice(&va.row(r)[start..start + len]);
        }
        let ng = self.ng(&[a]);
        self.push(Op::SliceCols(a, start), out, ng)
    }

    /// Rows `start..start + len`.
    pub fn rows(&mut self, a: NodeId, start: usize, len: usize) -> NodeId {
        let va = self.value(a);
        assert!(start + len <= va.rows());
        let c = va.cols();
        let out = Tensor::from_vec(len, c, va.data()[start * c..(start + len) * c].to_vec());
        let ng = self.ng(&[a]);
        self.push(Op::Rows(a, start), out, ng)
    }

    pub fn row(&mut self, a: NodeId, r: usize) -> NodeId {
        self.rows(a, r, 1)
    }

    /// Row lookup, `out[i] = a[indices[i]]`.
    pub fn gather(&mut self, a: NodeId, indices: &[usize]) -> NodeId {
        let va = self.value(a);
        let rows: Vec<Vec<f64>> = indices.iter().map(|&i| va.row(i).to_vec()).collect();
        let out = Tensor::from_rows(&rows);
        let ng = self.ng(&[a]);
        self.push(Op::Gather(a, indices.to_vec()), out, ng)
    }

    pub fn mean_rows(&mut self, a: NodeId) -> NodeId {
        let va = self.value(a);
        let n = va.rows() as f64;
        let mut out = Tensor::zeros(1, va.cols());
        for r in 0..va.rows() {
            for (o, x) in out.data_mut().iter_mut().zip(va.row(r)) {
                *o += x / n;
            }
        }
        let ng = self.ng(&[a]);
        self.push(Op::MeanRows(a), out, ng)
    }

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let v = Tensor::scalar(self.value(a).sum());
        let ng = self.ng(&[a]);
        self.push(Op::SumAll(a), v, ng)
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, a: NodeId) -> NodeId {
        let va = self.value(a);
        let mut out = Tensor::zeros(va.rows(), va.cols());
        for r in 0..va.rows() {
            out.row_mut(r).copy_from_slice(&crate::tensor::softmax(va.row(r)));
        }
        let ng = self.ng(&[a]);
        self.push(Op::Softmax(a), out, ng)
    }

    /// Row-wise log-softmax.
    pub fn log_softmax(&mut self, a: NodeId) -> NodeId {
        let va = self.value(a);
        let mut out = Tensor::zeros(va.rows(), va.cols());
        for r in 0..va.rows() {
            out.row_mut(r).copy_from_slice(&crate::tensor::log_softmax(va.row(r)));
        }
        let ng = self.ng(&[a]);
        self.push(Op::LogSoftmax(a), out, ng)
    }

    pub fn pick(&mut self, a: NodeId, r: usize, c: usize) -> NodeId {
        let v = Tensor::scalar(self.value(a).get(r, c));
        let ng = self.ng(&[a]);
        self.push(Op::Pick(a, r, c), v, ng)
    }

    /// Sum of the entries at `(row, col)` positions, as a `1 × 1` node.
    pub fn pick_sum(&mut self, a: NodeId, positions: &[(usize, usize)]) -> NodeId {
        let va = self.value(a);
        let v = Tensor::scalar(positions.iter().map(|&(r, c)| va.get(r, c)).sum());
        let ng = self.ng(&[a]);
        self.push(Op::PickSum(a, positions.to_vec()), v, ng)
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).transpose();
        let ng = self.ng(&[a]);
        self.push(Op::Transpose(a), v, ng)
    }

    /// Sum of scalar nodes.
    pub fn add_all(&mut self, terms: &[NodeId]) -> NodeId {
        assert!(!terms.is_empty());
        let mut acc = terms[0];
        for &t in &terms[1..] {
            acc = self.add(acc, t);
        }
        acc
    }

    /// Backpropagates from the scalar `root`.
    pub fn backward(&self, root: NodeId) -> Gradients {
        assert_eq!(self.value(root).shape(), (1, 1), "backward root must be a scalar");
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Tensor::scalar(1.0));
        let mut param_grads = ParamGrads::new();

        for idx in (0..=root.0).rev() {
            let Some(grad) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            match &node.op {
                Op::Constant => {}
                Op::Variable => {}
                Op::Param(pid) => param_grads.accumulate(*pid, &grad),
                Op::MatMul(a, b) => {
                    if self.nodes[a.0].needs_grad {
                        let da = grad.matmul_t(self.value(*b));
                        acc(&mut grads, *a, da);
                    }
                    if self.nodes[b.0].needs_grad {
                        let db = self.value(*a).t_matmul(&grad);
                        acc(&mut grads, *b, db);
                    }
                }
                Op::MatMulT(a, b) => {
                    // c = a bᵀ ; da = dc b ; db = dcᵀ a
                    if self.nodes[a.0].needs_grad {
                        let da = grad.matmul(self.value(*b));
                        acc(&mut grads, *a, da);
                    }
                    if self.nodes[b.0].needs_grad {
                        let db = grad.t_matmul(self.value(*a));
                        acc(&mut grads, *b, db);
                    }
                }
                Op::Add(a, b) => {
                    if self.nodes[a.0].needs_grad {
                        acc(&mut grads, *a, grad.clone());
                    }
                    if self.nodes[b.0].needs_grad {
                        let db = reduce_broadcast(&grad, self.value(*b).shape());
                        acc(&mut grads, *b, db);
                    }
                }
                Op::Sub(a, b) => {
                    if self.nodes[a.0].needs_grad {
                        acc(&mut grads, *a, grad.clone());
                    }
                    if self.nodes[b.0].needs_grad {
                        acc(&mut grads, *b, grad.map(|g| -g));
                    }
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    if self.nodes[a.0].needs_grad {
                        let da = broadcast_binary(&grad, vb, |g, y| g * y);
                        acc(&mut grads, *a, da);
                    }
                    if self.nodes[b.0].needs_grad {
                        let full = elementwise(&grad, va, |g, x| g * x);
                        acc(&mut grads, *b, reduce_broadcast(&full, vb.shape()));
                    }
                }
                Op::Scale(a, s) => acc(&mut grads, *a, grad.map(|g| g * s)),
                Op::Sigmoid(a) => {
                    let y = node.value.as_ref().expect("value");
                    acc(&mut grads, *a, elementwise(&grad, y, |g, y| g * y * (1.0 - y)));
                }
                Op::Tanh(a) => {
                    let y = node.value.as_ref().expect("value");
                    acc(&mut grads, *a, elementwise(&grad, y, |g, y| g * (1.0 - y * y)));
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let c = self.value(*p).cols();
                        if self.nodes[p.0].needs_grad {
                            let mut d = Tensor::zeros(grad.rows(), c);
                            for r in 0..grad.rows() {
                                d.row_mut(r).copy_from_slice(&grad.row(r)[offset..offset + c]);
                            }
                            acc(&mut grads, *p, d);
                        }
                        offset += c;
                    }
                }
                Op::StackRows(parts) => {
                    let mut offset = 0;
                    let c = grad.cols();
                    for p in parts {
                        let r = self.value(*p).rows();
                        if self.nodes[p.0].needs_grad {
                            let d = Tensor::from_vec(r, c, grad.data()[offset * c..(offset + r) * c].to_vec());
                            acc(&mut grads, *p, d);
                        }
                        offset += r;
                    }
                }
                Op::SliceCols(a, start) => {
                    let va = self.value(*a);
                    let mut d = Tensor::zeros(va.rows(), va.cols());
                    for r in 0..grad.rows() {
                        d.row_mut(r)[*start..*start + grad.cols()].copy_from_slice(grad.row(r));
                    }
                    acc(&mut grads, *a, d);
                }
                Op::Rows(a, start) => {
                    let va = self.value(*a);
                    let c = va.cols();
                    let mut d = Tensor::zeros(va.rows(), c);
                    d.data_mut()[start * c..(start + grad.rows()) * c].copy_from_slice(grad.data());
                    acc(&mut grads, *a, d);
                }
                Op::Gather(a, indices) => {
                    let va = self.value(*a);
                    let mut d = Tensor::zeros(va.rows(), va.cols());
                    for (i, &src) in indices.iter().enumerate() {
                        for (o, g) in d.row_mut(src).iter_mut().zip(grad.row(i)) {
                            *o += g;
                        }
                    }
                    acc(&mut grads, *a, d);
                }
                Op::MeanRows(a) => {
                    let va = self.value(*a);
                    let n = va.rows() as f64;
                    let mut d = Tensor::zeros(va.rows(), va.cols());
                    for r in 0..va.rows() {
                        for (o, g) in d.row_mut(r).iter_mut().zip(grad.row(0)) {
                            *o = g / n;
                        }
                    }
                    acc(&mut grads, *a, d);
                }
                Op::SumAll(a) => {
                    let (r, c) = self.value(*a).shape();
                    acc(&mut grads, *a, Tensor::filled(r, c, grad.data()[0]));
                }
                Op::Softmax(a) => {
                    let y = node.value.as_ref().expect("value");
                    let mut d = Tensor::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let s: f64 = grad.row(r).iter().zip(y.row(r)).map(|(g, y)| g * y).sum();
                        for ((o, g), y) in d.row_mut(r).iter_mut().zip(grad.row(r)).zip(y.row(r)) {
                            *o = y * (g - s);
                        }
                    }
                    acc(&mut grads, *a, d);
                }
                Op::LogSoftmax(a) => {
                    let y = node.value.as_ref().expect("value");
                    let mut d = Tensor::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let s: f64 = grad.row(r).iter().sum();
                        for ((o, g), ly) in d.row_mut(r).iter_mut().zip(grad.row(r)).zip(y.row(r)) {
                            *o = g - ly.exp() * s;
                        }
                    }
                    acc(&mut grads, *a, d);
                }
                Op::Pick(a, r, c) => {
                    let (rows, cols) = self.value(*a).shape();
                    let mut d = Tensor::zeros(rows, cols);
                    d.set(*r, *c, grad.data()[0]);
                    acc(&mut grads, *a, d);
                }
                Op::PickSum(a, positions) => {
                    let (rows, cols) = self.value(*a).shape();
                    let mut d = Tensor::zeros(rows, cols);
                    for &(r, c) in positions {
                        d.set(r, c, d.get(r, c) + grad.data()[0]);
                    }
                    acc(&mut grads, *a, d);
                }
                Op::Transpose(a) => acc(&mut grads, *a, grad.transpose()),
            }
            if matches!(node.op, Op::Variable) {
                grads[idx] = Some(grad);
            }
        }
        Gradients { nodes: grads, params: param_grads }
    }
}

fn acc(grads: &mut [Option<Tensor>], id: NodeId, g: Tensor) {
    match &mut grads[id.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn elementwise(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    assert_eq!(a.shape(), b.shape());
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_vec(a.rows(), a.cols(), data)
}

/// Elementwise op where `b` is either the same shape as `a` or a single row.
fn broadcast_binary(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    if a.shape() == b.shape() {
        return elementwise(a, b, f);
    }
    assert!(b.rows() == 1 && b.cols() == a.cols(), "cannot broadcast {:?} onto {:?}", b.shape(), a.shape());
    let mut out = Tensor::zeros(a.rows(), a.cols());
    for r in 0..a.rows() {
        for ((o, &x), &y) in out.row_mut(r).iter_mut().zip(a.row(r)).zip(b.row(0)) {
            *o = f(x, y);
        }
    }
    out
}

fn reduce_broadcast(grad: &Tensor, shape: (usize, usize)) -> Tensor {
    if grad.shape() == shape {
        return grad.clone();
    }
    let mut out = Tensor::zeros(shape.0, shape.1);
    for r in 0..grad.rows() {
        for (o, g) in out.row_mut(0).iter_mut().zip(grad.row(r)) {
            *o += g;
        }
    }
    out
}
