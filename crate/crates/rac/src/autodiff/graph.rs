//! Eager reverse-mode tape over small dense tensors.
//!
//! Every operation computes its forward value immediately and appends a node
//! to an append-only graph, so node ids are already in topological order and
//! the backward pass is a single reverse sweep. Shape mismatches and
//! non-finite values are treated as bugs and panic with the offending
//! operation named; silent NaN propagation is the failure mode this is meant
//! to rule out.

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use super::params::ParamSet;
use super::real::Real;

/// Tensor shape. A `Vector(n)` behaves as a single-row matrix for row-wise
/// operations; `Scalar` holds exactly one element.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Shape {
    Scalar,
    Vector(usize),
    Matrix(usize, usize),
}

impl Shape {
    pub fn len(&self) -> usize {
        match *self {
            Shape::Scalar => 1,
            Shape::Vector(n) => n,
            Shape::Matrix(r, c) => r * c,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// (rows, cols) with vectors viewed as one row.
    pub fn dims2(&self) -> (usize, usize) {
        match *self {
            Shape::Scalar => (1, 1),
            Shape::Vector(n) => (1, n),
            Shape::Matrix(r, c) => (r, c),
        }
    }

    pub fn rank(&self) -> usize {
        match *self {
            Shape::Scalar => 0,
            Shape::Vector(_) => 1,
            Shape::Matrix(_, _) => 2,
        }
    }
}

type NodeId = usize;

#[derive(Clone, Debug)]
enum Op<R: Real> {
    Leaf,
    Matmul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    /// `[m,n] + [n]`, bias broadcast over rows.
    AddBias(NodeId, NodeId),
    /// `[m,n] * [m]`, one scale factor per row.
    ScaleRows(NodeId, NodeId),
    AddScalar(NodeId, R),
    MulScalar(NodeId, R),
    Relu(NodeId),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Softplus(NodeId),
    Exp(NodeId),
    Log(NodeId),
    Square(NodeId),
    Softmax(NodeId),
    LogSoftmax(NodeId),
    SumAll(NodeId),
    MeanAll(NodeId),
    RowSum(NodeId),
    ConcatCols(Vec<NodeId>),
    ConcatRows(Vec<NodeId>),
    SliceCols(NodeId, usize, usize),
    GatherRows(NodeId, Vec<usize>),
    SelectPerRow(NodeId, Vec<usize>),
    Reshape(NodeId),
}

struct Node<R: Real> {
    value: Vec<R>,
    shape: Shape,
    grad: Vec<R>,
    op: Op<R>,
    requires_grad: bool,
}

struct GraphInner<R: Real> {
    nodes: Vec<Node<R>>,
    /// Leased parameter leaves: (name, node id).
    bindings: Vec<(String, NodeId)>,
    bound: HashMap<String, NodeId>,
    consumed: bool,
}

/// Shared handle to one computation tape. Cheap to clone; single-threaded by
/// construction (`Rc`), distinct graphs on distinct threads are independent.
pub struct Graph<R: Real> {
    inner: Rc<RefCell<GraphInner<R>>>,
}

impl<R: Real> Clone for Graph<R> {
    fn clone(&self) -> Self {
        Graph {
            inner: Rc::clone(&self.inner),
        }
    }
}

impl<R: Real> Default for Graph<R> {
    fn default() -> Self {
        Self::new()
    }
}

/// Handle to one node of a [`Graph`].
pub struct Tensor<R: Real> {
    graph: Graph<R>,
    id: NodeId,
}

impl<R: Real> Clone for Tensor<R> {
    fn clone(&self) -> Self {
        Tensor {
            graph: self.graph.clone(),
            id: self.id,
        }
    }
}

fn check_finite<R: Real>(op: &str, data: &[R]) {
    for (i, v) in data.iter().enumerate() {
        if !v.is_finite() {
            panic!("non-finite value {v} produced by `{op}` at flat index {i}");
        }
    }
}

impl<R: Real> Graph<R> {
    pub fn new() -> Self {
        Graph {
            inner: Rc::new(RefCell::new(GraphInner {
                nodes: Vec::new(),
                bindings: Vec::new(),
                bound: HashMap::new(),
                consumed: false,
            })),
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    fn push(&self, value: Vec<R>, shape: Shape, op: Op<R>, requires_grad: bool) -> Tensor<R> {
        debug_assert_eq!(value.len(), shape.len());
        let mut inner = self.inner.borrow_mut();
        let grad = if requires_grad {
            vec![R::zero(); value.len()]
        } else {
            Vec::new()
        };
        let id = inner.nodes.len();
        inner.nodes.push(Node {
            value,
            shape,
            grad,
            op,
            requires_grad,
        });
        Tensor {
            graph: self.clone(),
            id,
        }
    }

    /// Constant leaf; gradients never flow into it.
    pub fn constant(&self, data: Vec<R>, shape: Shape) -> Tensor<R> {
        assert_eq!(
            data.len(),
            shape.len(),
            "constant: data length {} does not match shape {:?}",
            data.len(),
            shape
        );
        check_finite("constant", &data);
        self.push(data, shape, Op::Leaf, false)
    }

    pub fn scalar(&self, x: R) -> Tensor<R> {
        self.constant(vec![x], Shape::Scalar)
    }

    pub fn vector(&self, xs: &[R]) -> Tensor<R> {
        self.constant(xs.to_vec(), Shape::Vector(xs.len()))
    }

    pub fn matrix(&self, rows: usize, cols: usize, data: Vec<R>) -> Tensor<R> {
        self.constant(data, Shape::Matrix(rows, cols))
    }

    pub fn zeros(&self, shape: Shape) -> Tensor<R> {
        self.constant(vec![R::zero(); shape.len()], shape)
    }

    /// Lease a parameter into the graph as a gradient-tracked leaf. Leasing
    /// the same name twice returns the same node.
    pub fn param(&self, params: &ParamSet<R>, name: &str) -> Tensor<R> {
        if let Some(&id) = self.inner.borrow().bound.get(name) {
            return Tensor {
                graph: self.clone(),
                id,
            };
        }
        let p = params.get(name);
        let t = self.push(p.value.clone(), p.shape, Op::Leaf, true);
        let mut inner = self.inner.borrow_mut();
        inner.bindings.push((name.to_string(), t.id));
        inner.bound.insert(name.to_string(), t.id);
        t
    }

    /// Lease a parameter as a constant (no gradient tracking). Used for
    /// target networks and stop-gradient evaluation.
    pub fn frozen(&self, params: &ParamSet<R>, name: &str) -> Tensor<R> {
        let p = params.get(name);
        self.push(p.value.clone(), p.shape, Op::Leaf, false)
    }

    /// Reverse sweep from a scalar loss. Gradients are accumulated (`+=`)
    /// into `sink` for every leased parameter reachable from the loss;
    /// parameters the loss does not depend on are left untouched. A graph can
    /// be swept once.
    pub fn backward(&self, loss: &Tensor<R>, sink: &mut ParamSet<R>) {
        assert!(
            Rc::ptr_eq(&self.inner, &loss.graph.inner),
            "backward: loss belongs to a different graph"
        );
        let mut inner = self.inner.borrow_mut();
        assert!(!inner.consumed, "backward: graph already consumed");
        inner.consumed = true;
        assert_eq!(
            inner.nodes[loss.id].shape,
            Shape::Scalar,
            "backward: loss must be a scalar, got {:?}",
            inner.nodes[loss.id].shape
        );

        // Reachability from the loss keeps the sweep off dead branches.
        let mut reach = vec![false; loss.id + 1];
        let mut stack = vec![loss.id];
        while let Some(id) = stack.pop() {
            if reach[id] {
                continue;
            }
            reach[id] = true;
            for_each_parent(&inner.nodes[id].op, |p| {
                if !reach[p] {
                    stack.push(p);
                }
            });
        }

        inner.nodes[loss.id].grad[0] = R::one();
        for id in (0..=loss.id).rev() {
            if !reach[id] || !inner.nodes[id].requires_grad {
                continue;
            }
            let (head, tail) = inner.nodes.split_at_mut(id);
            let node = &tail[0];
            propagate(node, head);
        }

        for (name, id) in &inner.bindings {
            let node = &inner.nodes[*id];
            if reach.get(*id).copied().unwrap_or(false) {
                sink.accumulate_grad(name, &node.grad);
            }
        }
    }
}

fn for_each_parent<R: Real>(op: &Op<R>, mut f: impl FnMut(NodeId)) {
    match op {
        Op::Leaf => {}
        Op::Matmul(a, b)
        | Op::Add(a, b)
        | Op::Sub(a, b)
        | Op::Mul(a, b)
        | Op::Div(a, b)
        | Op::AddBias(a, b)
        | Op::ScaleRows(a, b) => {
            f(*a);
            f(*b);
        }
        Op::AddScalar(a, _)
        | Op::MulScalar(a, _)
        | Op::Relu(a)
        | Op::Tanh(a)
        | Op::Sigmoid(a)
        | Op::Softplus(a)
        | Op::Exp(a)
        | Op::Log(a)
        | Op::Square(a)
        | Op::Softmax(a)
        | Op::LogSoftmax(a)
        | Op::SumAll(a)
        | Op::MeanAll(a)
        | Op::RowSum(a)
        | Op::SliceCols(a, _, _)
        | Op::GatherRows(a, _)
        | Op::SelectPerRow(a, _)
        | Op::Reshape(a) => f(*a),
        Op::ConcatCols(ps) | Op::ConcatRows(ps) => {
            for p in ps {
                f(*p);
            }
        }
    }
}

/// Apply the vector-Jacobian product of `node.op`, accumulating into the
/// gradients of its parents (all of which precede it in `head`).
fn propagate<R: Real>(node: &Node<R>, head: &mut [Node<R>]) {
    let g = &node.grad;
    match &node.op {
        Op::Leaf => {}
        Op::Matmul(a, b) => {
            let (m, k) = head[*a].shape.dims2();
            let (_, n) = head[*b].shape.dims2();
            if head[*a].requires_grad {
                // dA[i,l] += sum_j dC[i,j] * B[l,j]
                let bv: Vec<R> = head[*b].value.clone();
                let da = &mut head[*a].grad;
                for i in 0..m {
                    for l in 0..k {
                        let mut acc = R::zero();
                        let brow = &bv[l * n..(l + 1) * n];
                        let grow = &g[i * n..(i + 1) * n];
                        for j in 0..n {
                            acc += grow[j] * brow[j];
                        }
                        da[i * k + l] += acc;
                    }
                }
            }
            if head[*b].requires_grad {
                let av: Vec<R> = head[*a].value.clone();
                let db = &mut head[*b].grad;
                for i in 0..m {
                    let grow = &g[i * n..(i + 1) * n];
                    for l in 0..k {
                        let ail = av[i * k + l];
                        let drow = &mut db[l * n..(l + 1) * n];
                        for j in 0..n {
                            drow[j] += ail * grow[j];
                        }
                    }
                }
            }
        }
        Op::Add(a, b) => {
            if head[*a].requires_grad {
                axpy(&mut head[*a].grad, g, R::one());
            }
            if head[*b].requires_grad {
                axpy(&mut head[*b].grad, g, R::one());
            }
        }
        Op::Sub(a, b) => {
            if head[*a].requires_grad {
                axpy(&mut head[*a].grad, g, R::one());
            }
            if head[*b].requires_grad {
                axpy(&mut head[*b].grad, g, -R::one());
            }
        }
        Op::Mul(a, b) => {
            if head[*a].requires_grad {
                let bv = head[*b].value.clone();
                for (d, (gi, bi)) in head[*a].grad.iter_mut().zip(g.iter().zip(bv.iter())) {
                    *d += *gi * *bi;
                }
            }
            if head[*b].requires_grad {
                let av = head[*a].value.clone();
                for (d, (gi, ai)) in head[*b].grad.iter_mut().zip(g.iter().zip(av.iter())) {
                    *d += *gi * *ai;
                }
            }
        }
        Op::Div(a, b) => {
            let bv = head[*b].value.clone();
            if head[*a].requires_grad {
                for (d, (gi, bi)) in head[*a].grad.iter_mut().zip(g.iter().zip(bv.iter())) {
                    *d += *gi / *bi;
                }
            }
            if head[*b].requires_grad {
                let y = &node.value;
                for i in 0..g.len() {
                    head[*b].grad[i] -= g[i] * y[i] / bv[i];
                }
            }
        }
        Op::AddBias(a, b) => {
            let (m, n) = head[*a].shape.dims2();
            if head[*a].requires_grad {
                axpy(&mut head[*a].grad, g, R::one());
            }
            if head[*b].requires_grad {
                let db = &mut head[*b].grad;
                for i in 0..m {
                    for j in 0..n {
                        db[j] += g[i * n + j];
                    }
                }
            }
        }
        Op::ScaleRows(a, s) => {
            let (m, n) = head[*a].shape.dims2();
            if head[*a].requires_grad {
                let sv = head[*s].value.clone();
                let da = &mut head[*a].grad;
                for i in 0..m {
                    for j in 0..n {
                        da[i * n + j] += g[i * n + j] * sv[i];
                    }
                }
            }
            if head[*s].requires_grad {
                let av = head[*a].value.clone();
                let ds = &mut head[*s].grad;
                for i in 0..m {
                    let mut acc = R::zero();
                    for j in 0..n {
                        acc += g[i * n + j] * av[i * n + j];
                    }
                    ds[i] += acc;
                }
            }
        }
        Op::AddScalar(a, _) => {
            if head[*a].requires_grad {
                axpy(&mut head[*a].grad, g, R::one());
            }
        }
        Op::MulScalar(a, c) => {
            if head[*a].requires_grad {
                axpy(&mut head[*a].grad, g, *c);
            }
        }
        Op::Relu(a) => {
            if head[*a].requires_grad {
                let av = head[*a].value.clone();
                for i in 0..g.len() {
                    if av[i] > R::zero() {
                        head[*a].grad[i] += g[i];
                    }
                }
            }
        }
        Op::Tanh(a) => {
            if head[*a].requires_grad {
                let y = &node.value;
                for i in 0..g.len() {
                    head[*a].grad[i] += g[i] * (R::one() - y[i] * y[i]);
                }
            }
        }
        Op::Sigmoid(a) => {
            if head[*a].requires_grad {
                let y = &node.value;
                for i in 0..g.len() {
                    head[*a].grad[i] += g[i] * y[i] * (R::one() - y[i]);
                }
            }
        }
        Op::Softplus(a) => {
            if head[*a].requires_grad {
                let av = head[*a].value.clone();
                for i in 0..g.len() {
                    head[*a].grad[i] += g[i] * sigmoid_scalar(av[i]);
                }
            }
        }
        Op::Exp(a) => {
            if head[*a].requires_grad {
                let y = &node.value;
                for i in 0..g.len() {
                    head[*a].grad[i] += g[i] * y[i];
                }
            }
        }
        Op::Log(a) => {
            if head[*a].requires_grad {
                let av = head[*a].value.clone();
                for i in 0..g.len() {
                    head[*a].grad[i] += g[i] / av[i];
                }
            }
        }
        Op::Square(a) => {
            if head[*a].requires_grad {
                let av = head[*a].value.clone();
                let two = R::of(2.0);
                for i in 0..g.len() {
                    head[*a].grad[i] += two * av[i] * g[i];
                }
            }
        }
        Op::Softmax(a) => {
            if head[*a].requires_grad {
                let (m, n) = node.shape.dims2();
                let y = &node.value;
                for i in 0..m {
                    let yr = &y[i * n..(i + 1) * n];
                    let gr = &g[i * n..(i + 1) * n];
                    let mut dot = R::zero();
                    for j in 0..n {
                        dot += gr[j] * yr[j];
                    }
                    let da = &mut head[*a].grad[i * n..(i + 1) * n];
                    for j in 0..n {
                        da[j] += yr[j] * (gr[j] - dot);
                    }
                }
            }
        }
        Op::LogSoftmax(a) => {
            if head[*a].requires_grad {
                let (m, n) = node.shape.dims2();
                let y = &node.value;
                for i in 0..m {
                    let yr = &y[i * n..(i + 1) * n];
                    let gr = &g[i * n..(i + 1) * n];
                    let mut gsum = R::zero();
                    for j in 0..n {
                        gsum += gr[j];
                    }
                    let da = &mut head[*a].grad[i * n..(i + 1) * n];
                    for j in 0..n {
                        da[j] += gr[j] - yr[j].exp() * gsum;
                    }
                }
            }
        }
        Op::SumAll(a) => {
            if head[*a].requires_grad {
                let go = g[0];
                for d in head[*a].grad.iter_mut() {
                    *d += go;
                }
            }
        }
        Op::MeanAll(a) => {
            if head[*a].requires_grad {
                let go = g[0] / R::of(head[*a].value.len() as f64);
                for d in head[*a].grad.iter_mut() {
                    *d += go;
                }
            }
        }
        Op::RowSum(a) => {
            if head[*a].requires_grad {
                let (m, n) = head[*a].shape.dims2();
                let da = &mut head[*a].grad;
                for i in 0..m {
                    for j in 0..n {
                        da[i * n + j] += g[i];
                    }
                }
            }
        }
        Op::ConcatCols(parts) => {
            let (m, _) = node.shape.dims2();
            let ncols: Vec<usize> = parts.iter().map(|p| head[*p].shape.dims2().1).collect();
            let total: usize = ncols.iter().sum();
            let mut off = 0;
            for (pi, p) in parts.iter().enumerate() {
                let c = ncols[pi];
                if head[*p].requires_grad {
                    let dp = &mut head[*p].grad;
                    for i in 0..m {
                        for j in 0..c {
                            dp[i * c + j] += g[i * total + off + j];
                        }
                    }
                }
                off += c;
            }
        }
        Op::ConcatRows(parts) => {
            let (_, n) = node.shape.dims2();
            let mut off = 0;
            for p in parts {
                let (rm, _) = head[*p].shape.dims2();
                if head[*p].requires_grad {
                    let dp = &mut head[*p].grad;
                    for i in 0..rm {
                        for j in 0..n {
                            dp[i * n + j] += g[(off + i) * n + j];
                        }
                    }
                }
                off += rm;
            }
        }
        Op::SliceCols(a, start, end) => {
            if head[*a].requires_grad {
                let (m, n) = head[*a].shape.dims2();
                let w = end - start;
                let da = &mut head[*a].grad;
                for i in 0..m {
                    for j in 0..w {
                        da[i * n + start + j] += g[i * w + j];
                    }
                }
            }
        }
        Op::GatherRows(a, idx) => {
            if head[*a].requires_grad {
                let (_, n) = head[*a].shape.dims2();
                let da = &mut head[*a].grad;
                for (r, &src) in idx.iter().enumerate() {
                    for j in 0..n {
                        da[src * n + j] += g[r * n + j];
                    }
                }
            }
        }
        Op::SelectPerRow(a, idx) => {
            if head[*a].requires_grad {
                let (_, n) = head[*a].shape.dims2();
                let da = &mut head[*a].grad;
                for (i, &j) in idx.iter().enumerate() {
                    da[i * n + j] += g[i];
                }
            }
        }
        Op::Reshape(a) => {
            if head[*a].requires_grad {
                axpy(&mut head[*a].grad, g, R::one());
            }
        }
    }
}

#[inline]
fn axpy<R: Real>(dst: &mut [R], src: &[R], c: R) {
    for (d, s) in dst.iter_mut().zip(src.iter()) {
        *d += c * *s;
    }
}

#[inline]
fn sigmoid_scalar<R: Real>(x: R) -> R {
    if x >= R::zero() {
        R::one() / (R::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (R::one() + e)
    }
}

#[inline]
fn softplus_scalar<R: Real>(x: R) -> R {
    // max(x, 0) + ln(1 + exp(-|x|)), stable on both tails
    x.max(R::zero()) + (R::one() + (-x.abs()).exp()).ln()
}

impl<R: Real> Tensor<R> {
    pub fn graph(&self) -> &Graph<R> {
        &self.graph
    }

    pub fn shape(&self) -> Shape {
        self.graph.inner.borrow().nodes[self.id].shape
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.inner.borrow().nodes[self.id].requires_grad
    }

    /// Copy the forward value out of the graph.
    pub fn value(&self) -> Vec<R> {
        self.graph.inner.borrow().nodes[self.id].value.clone()
    }

    /// Scalar value; panics if the tensor is not a scalar.
    pub fn item(&self) -> R {
        let inner = self.graph.inner.borrow();
        let node = &inner.nodes[self.id];
        assert_eq!(node.shape, Shape::Scalar, "item() on non-scalar tensor");
        node.value[0]
    }

    /// Gradient accumulated by `backward`; zeros before any sweep.
    pub fn grad(&self) -> Vec<R> {
        let inner = self.graph.inner.borrow();
        let node = &inner.nodes[self.id];
        if node.requires_grad {
            node.grad.clone()
        } else {
            vec![R::zero(); node.value.len()]
        }
    }

    /// Constant copy of this tensor: same value, gradient flow cut.
    pub fn detach(&self) -> Tensor<R> {
        let (value, shape) = {
            let inner = self.graph.inner.borrow();
            let n = &inner.nodes[self.id];
            (n.value.clone(), n.shape)
        };
        self.graph.push(value, shape, Op::Leaf, false)
    }

    fn unary(&self, name: &str, op: Op<R>, f: impl Fn(R) -> R) -> Tensor<R> {
        let (value, shape, rg) = {
            let inner = self.graph.inner.borrow();
            let n = &inner.nodes[self.id];
            (
                n.value.iter().map(|&x| f(x)).collect::<Vec<R>>(),
                n.shape,
                n.requires_grad,
            )
        };
        check_finite(name, &value);
        self.graph.push(value, shape, op, rg)
    }

    fn binary_same_shape(
        &self,
        name: &str,
        rhs: &Tensor<R>,
        op: Op<R>,
        f: impl Fn(R, R) -> R,
    ) -> Tensor<R> {
        assert!(
            Rc::ptr_eq(&self.graph.inner, &rhs.graph.inner),
            "{name}: operands from different graphs"
        );
        let (value, shape, rg) = {
            let inner = self.graph.inner.borrow();
            let a = &inner.nodes[self.id];
            let b = &inner.nodes[rhs.id];
            assert_eq!(
                a.shape, b.shape,
                "{name}: shape mismatch {:?} vs {:?}",
                a.shape, b.shape
            );
            let v = a
                .value
                .iter()
                .zip(b.value.iter())
                .map(|(&x, &y)| f(x, y))
                .collect::<Vec<R>>();
            (v, a.shape, a.requires_grad || b.requires_grad)
        };
        check_finite(name, &value);
        self.graph.push(value, shape, op, rg)
    }

    pub fn add(&self, rhs: &Tensor<R>) -> Tensor<R> {
        self.binary_same_shape("add", rhs, Op::Add(self.id, rhs.id), |a, b| a + b)
    }

    pub fn sub(&self, rhs: &Tensor<R>) -> Tensor<R> {
        self.binary_same_shape("sub", rhs, Op::Sub(self.id, rhs.id), |a, b| a - b)
    }

    pub fn mul(&self, rhs: &Tensor<R>) -> Tensor<R> {
        self.binary_same_shape("mul", rhs, Op::Mul(self.id, rhs.id), |a, b| a * b)
    }

    pub fn div(&self, rhs: &Tensor<R>) -> Tensor<R> {
        self.binary_same_shape("div", rhs, Op::Div(self.id, rhs.id), |a, b| a / b)
    }

    /// `[m,k] x [k,n] -> [m,n]`; a vector left operand acts as one row.
    pub fn matmul(&self, rhs: &Tensor<R>) -> Tensor<R> {
        assert!(
            Rc::ptr_eq(&self.graph.inner, &rhs.graph.inner),
            "matmul: operands from different graphs"
        );
        let (value, shape, rg) = {
            let inner = self.graph.inner.borrow();
            let a = &inner.nodes[self.id];
            let b = &inner.nodes[rhs.id];
            let (m, k) = a.shape.dims2();
            let (k2, n) = b.shape.dims2();
            assert_eq!(
                k, k2,
                "matmul: inner dimensions differ, {:?} x {:?}",
                a.shape, b.shape
            );
            let mut out = vec![R::zero(); m * n];
            for i in 0..m {
                let arow = &a.value[i * k..(i + 1) * k];
                let orow = &mut out[i * n..(i + 1) * n];
                for (l, &ail) in arow.iter().enumerate() {
                    if ail == R::zero() {
                        continue;
                    }
                    let brow = &b.value[l * n..(l + 1) * n];
                    for j in 0..n {
                        orow[j] += ail * brow[j];
                    }
                }
            }
            let shape = match a.shape {
                Shape::Matrix(_, _) => Shape::Matrix(m, n),
                _ => Shape::Vector(n),
            };
            (out, shape, a.requires_grad || b.requires_grad)
        };
        check_finite("matmul", &value);
        self.graph
            .push(value, shape, Op::Matmul(self.id, rhs.id), rg)
    }

    /// Add a `[n]` bias to every row of a `[m,n]` matrix.
    pub fn add_bias(&self, bias: &Tensor<R>) -> Tensor<R> {
        let (value, shape, rg) = {
            let inner = self.graph.inner.borrow();
            let a = &inner.nodes[self.id];
            let b = &inner.nodes[bias.id];
            let (m, n) = a.shape.dims2();
            assert_eq!(
                b.shape.len(),
                n,
                "add_bias: bias length {} vs row width {}",
                b.shape.len(),
                n
            );
            let mut v = a.value.clone();
            for i in 0..m {
                for j in 0..n {
                    v[i * n + j] += b.value[j];
                }
            }
            (v, a.shape, a.requires_grad || b.requires_grad)
        };
        check_finite("add_bias", &value);
        self.graph
            .push(value, shape, Op::AddBias(self.id, bias.id), rg)
    }

    /// Multiply row `i` of a `[m,n]` matrix by `scale[i]`.
    pub fn scale_rows(&self, scale: &Tensor<R>) -> Tensor<R> {
        let (value, shape, rg) = {
            let inner = self.graph.inner.borrow();
            let a = &inner.nodes[self.id];
            let s = &inner.nodes[scale.id];
            let (m, n) = a.shape.dims2();
            assert_eq!(
                s.shape.len(),
                m,
                "scale_rows: scale length {} vs row count {}",
                s.shape.len(),
                m
            );
            let mut v = a.value.clone();
            for i in 0..m {
                for j in 0..n {
                    v[i * n + j] *= s.value[i];
                }
            }
            (v, a.shape, a.requires_grad || s.requires_grad)
        };
        check_finite("scale_rows", &value);
        self.graph
            .push(value, shape, Op::ScaleRows(self.id, scale.id), rg)
    }

    pub fn add_scalar(&self, c: R) -> Tensor<R> {
        self.unary("add_scalar", Op::AddScalar(self.id, c), |x| x + c)
    }

    pub fn mul_scalar(&self, c: R) -> Tensor<R> {
        self.unary("mul_scalar", Op::MulScalar(self.id, c), |x| x * c)
    }

    pub fn neg(&self) -> Tensor<R> {
        self.mul_scalar(-R::one())
    }

    pub fn relu(&self) -> Tensor<R> {
        self.unary("relu", Op::Relu(self.id), |x| x.max(R::zero()))
    }

    pub fn tanh(&self) -> Tensor<R> {
        self.unary("tanh", Op::Tanh(self.id), |x| x.tanh())
    }

    pub fn sigmoid(&self) -> Tensor<R> {
        self.unary("sigmoid", Op::Sigmoid(self.id), sigmoid_scalar)
    }

    pub fn softplus(&self) -> Tensor<R> {
        self.unary("softplus", Op::Softplus(self.id), softplus_scalar)
    }

    pub fn exp(&self) -> Tensor<R> {
        self.unary("exp", Op::Exp(self.id), |x| x.exp())
    }

    pub fn log(&self) -> Tensor<R> {
        self.unary("log", Op::Log(self.id), |x| x.ln())
    }

    pub fn square(&self) -> Tensor<R> {
        self.unary("square", Op::Square(self.id), |x| x * x)
    }

    fn rowwise(&self, name: &str, op: Op<R>, f: impl Fn(&[R], &mut [R])) -> Tensor<R> {
        let (value, shape, rg) = {
            let inner = self.graph.inner.borrow();
            let a = &inner.nodes[self.id];
            let (m, n) = a.shape.dims2();
            let mut v = vec![R::zero(); m * n];
            for i in 0..m {
                f(&a.value[i * n..(i + 1) * n], &mut v[i * n..(i + 1) * n]);
            }
            (v, a.shape, a.requires_grad)
        };
        check_finite(name, &value);
        self.graph.push(value, shape, op, rg)
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax(&self) -> Tensor<R> {
        self.rowwise("softmax", Op::Softmax(self.id), |row, out| {
            let mx = row.iter().fold(R::neg_infinity(), |a, &b| a.max(b));
            let mut z = R::zero();
            for (o, &x) in out.iter_mut().zip(row.iter()) {
                *o = (x - mx).exp();
                z += *o;
            }
            for o in out.iter_mut() {
                *o = *o / z;
            }
        })
    }

    /// Row-wise log-softmax; the stable route to log-probabilities.
    pub fn log_softmax(&self) -> Tensor<R> {
        self.rowwise("log_softmax", Op::LogSoftmax(self.id), |row, out| {
            let mx = row.iter().fold(R::neg_infinity(), |a, &b| a.max(b));
            let mut z = R::zero();
            for &x in row.iter() {
                z += (x - mx).exp();
            }
            let lse = mx + z.ln();
            for (o, &x) in out.iter_mut().zip(row.iter()) {
                *o = x - lse;
            }
        })
    }

    pub fn sum(&self) -> Tensor<R> {
        let (value, rg) = {
            let inner = self.graph.inner.borrow();
            let a = &inner.nodes[self.id];
            (
                vec![a.value.iter().copied().sum::<R>()],
                a.requires_grad,
            )
        };
        check_finite("sum", &value);
        self.graph
            .push(value, Shape::Scalar, Op::SumAll(self.id), rg)
    }

    pub fn mean(&self) -> Tensor<R> {
        let (value, rg) = {
            let inner = self.graph.inner.borrow();
            let a = &inner.nodes[self.id];
            let s = a.value.iter().copied().sum::<R>();
            (vec![s / R::of(a.value.len() as f64)], a.requires_grad)
        };
        check_finite("mean", &value);
        self.graph
            .push(value, Shape::Scalar, Op::MeanAll(self.id), rg)
    }

    /// Per-row sum: `[m,n] -> [m]`; a vector collapses to a scalar.
    pub fn row_sum(&self) -> Tensor<R> {
        let (value, shape, rg) = {
            let inner = self.graph.inner.borrow();
            let a = &inner.nodes[self.id];
            let (m, n) = a.shape.dims2();
            let mut v = vec![R::zero(); m];
            for i in 0..m {
                v[i] = a.value[i * n..(i + 1) * n].iter().copied().sum();
            }
            let shape = match a.shape {
                Shape::Matrix(_, _) => Shape::Vector(m),
                _ => Shape::Scalar,
            };
            (v, shape, a.requires_grad)
        };
        check_finite("row_sum", &value);
        self.graph.push(value, shape, Op::RowSum(self.id), rg)
    }

    /// Columns `[start, end)` of every row.
    pub fn slice_cols(&self, start: usize, end: usize) -> Tensor<R> {
        let (value, shape, rg) = {
            let inner = self.graph.inner.borrow();
            let a = &inner.nodes[self.id];
            let (m, n) = a.shape.dims2();
            assert!(
                start < end && end <= n,
                "slice_cols: [{start}, {end}) out of width {n}"
            );
            let w = end - start;
            let mut v = vec![R::zero(); m * w];
            for i in 0..m {
                v[i * w..(i + 1) * w].copy_from_slice(&a.value[i * n + start..i * n + end]);
            }
            let shape = match a.shape {
                Shape::Matrix(_, _) => Shape::Matrix(m, w),
                _ => Shape::Vector(w),
            };
            (v, shape, a.requires_grad)
        };
        self.graph
            .push(value, shape, Op::SliceCols(self.id, start, end), rg)
    }

    /// New matrix whose row `r` is row `idx[r]` of `self`.
    pub fn gather_rows(&self, idx: &[usize]) -> Tensor<R> {
        let (value, shape, rg) = {
            let inner = self.graph.inner.borrow();
            let a = &inner.nodes[self.id];
            let (m, n) = a.shape.dims2();
            let mut v = vec![R::zero(); idx.len() * n];
            for (r, &src) in idx.iter().enumerate() {
                assert!(src < m, "gather_rows: row {src} out of {m}");
                v[r * n..(r + 1) * n].copy_from_slice(&a.value[src * n..(src + 1) * n]);
            }
            (v, Shape::Matrix(idx.len(), n), a.requires_grad)
        };
        self.graph
            .push(value, shape, Op::GatherRows(self.id, idx.to_vec()), rg)
    }

    /// Pick one column per row: `out[i] = self[i, idx[i]]`.
    pub fn select_per_row(&self, idx: &[usize]) -> Tensor<R> {
        let (value, shape, rg) = {
            let inner = self.graph.inner.borrow();
            let a = &inner.nodes[self.id];
            let (m, n) = a.shape.dims2();
            assert_eq!(idx.len(), m, "select_per_row: {} indices for {m} rows", idx.len());
            let mut v = vec![R::zero(); m];
            for (i, &j) in idx.iter().enumerate() {
                assert!(j < n, "select_per_row: column {j} out of {n}");
                v[i] = a.value[i * n + j];
            }
            let shape = match a.shape {
                Shape::Matrix(_, _) => Shape::Vector(m),
                _ => Shape::Scalar,
            };
            (v, shape, a.requires_grad)
        };
        self.graph
            .push(value, shape, Op::SelectPerRow(self.id, idx.to_vec()), rg)
    }

    /// Reinterpret the flat data under a new shape of equal length.
    pub fn reshape(&self, shape: Shape) -> Tensor<R> {
        let (value, rg) = {
            let inner = self.graph.inner.borrow();
            let a = &inner.nodes[self.id];
            assert_eq!(
                a.shape.len(),
                shape.len(),
                "reshape: {:?} -> {:?} changes element count",
                a.shape,
                shape
            );
            (a.value.clone(), a.requires_grad)
        };
        self.graph.push(value, shape, Op::Reshape(self.id), rg)
    }
}

/// Concatenate along columns; all parts must have the same row count.
pub fn concat_cols<R: Real>(parts: &[&Tensor<R>]) -> Tensor<R> {
    assert!(!parts.is_empty(), "concat_cols: empty part list");
    let graph = parts[0].graph.clone();
    let (value, shape, rg) = {
        let inner = graph.inner.borrow();
        let m = inner.nodes[parts[0].id].shape.dims2().0;
        let mut total = 0usize;
        let mut rg = false;
        for p in parts {
            let n = &inner.nodes[p.id];
            assert_eq!(
                n.shape.dims2().0,
                m,
                "concat_cols: row count mismatch ({:?})",
                n.shape
            );
            total += n.shape.dims2().1;
            rg |= n.requires_grad;
        }
        let mut v = vec![R::zero(); m * total];
        let mut off = 0;
        for p in parts {
            let n = &inner.nodes[p.id];
            let c = n.shape.dims2().1;
            for i in 0..m {
                v[i * total + off..i * total + off + c]
                    .copy_from_slice(&n.value[i * c..(i + 1) * c]);
            }
            off += c;
        }
        let shape = if m == 1 && matches!(inner.nodes[parts[0].id].shape, Shape::Vector(_) | Shape::Scalar)
        {
            Shape::Vector(total)
        } else {
            Shape::Matrix(m, total)
        };
        (v, shape, rg)
    };
    graph.push(
        value,
        shape,
        Op::ConcatCols(parts.iter().map(|p| p.id).collect()),
        rg,
    )
}

/// Concatenate along rows; all parts must have the same column count.
pub fn concat_rows<R: Real>(parts: &[&Tensor<R>]) -> Tensor<R> {
    assert!(!parts.is_empty(), "concat_rows: empty part list");
    let graph = parts[0].graph.clone();
    let (value, shape, rg) = {
        let inner = graph.inner.borrow();
        let n = inner.nodes[parts[0].id].shape.dims2().1;
        let mut rows = 0usize;
        let mut rg = false;
        for p in parts {
            let node = &inner.nodes[p.id];
            assert_eq!(
                node.shape.dims2().1,
                n,
                "concat_rows: column count mismatch ({:?})",
                node.shape
            );
            rows += node.shape.dims2().0;
            rg |= node.requires_grad;
        }
        let mut v = Vec::with_capacity(rows * n);
        for p in parts {
            v.extend_from_slice(&inner.nodes[p.id].value);
        }
        (v, Shape::Matrix(rows, n), rg)
    };
    graph.push(
        value,
        shape,
        Op::ConcatRows(parts.iter().map(|p| p.id).collect()),
        rg,
    )
}
