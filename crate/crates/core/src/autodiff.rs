//! Tape-based reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Graph`] records every operation as a node appended after its parents, so
//! node order is already a topological order. [`Graph::backward`] walks the tape
//! from the root towards the leaves exactly once and adds the resulting adjoints
//! into per-leaf gradient accumulators. Accumulators are only cleared by
//! [`Graph::zero_grad`].
//!
//! Tensors are row-major with no views. The only broadcasting supported is
//! between a one-element tensor and an arbitrary tensor, plus the explicit
//! row-wise [`Graph::add_bias`].
//!
//! ```
//! use ttadc::autodiff::{Graph, Tensor};
//!
//! let mut g = Graph::new();
//! let x = g.leaf(Tensor::vector(vec![3.0]));
//! let y = g.mul(x, x).unwrap();
//! g.backward(y).unwrap();
//! assert_eq!(g.value(y).data(), &[9.0]);
//! assert_eq!(g.grad(x).unwrap().data(), &[6.0]);
//! ```

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AutodiffError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op} is undefined for input {value}")]
    Domain { op: &'static str, value: f64 },
    #[error("{op} expects a rank-{expected} tensor, got shape {shape:?}")]
    Rank {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },
    #[error("tensor of shape {shape:?} needs {expected} values, got {actual}")]
    Length {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("index {index} out of bounds for length {len}")]
    Index { index: usize, len: usize },
    #[error("backward root must be a scalar, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),
    #[error("{0} needs at least one operand")]
    Empty(&'static str),
}

pub type Result<T> = std::result::Result<T, AutodiffError>;

/// Dense row-major tensor of `f64` values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() || shape.is_empty() || shape.contains(&0) {
            return Err(AutodiffError::Length {
                shape,
                expected,
                actual: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    /// Rank-1 tensor. Panics on an empty vector.
    pub fn vector(data: Vec<f64>) -> Self {
        assert!(!data.is_empty(), "empty vector tensor");
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// Row count of a matrix (or the length of a vector).
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Column count of a matrix; 1 for vectors.
    pub fn cols(&self) -> usize {
        self.shape.get(1).copied().unwrap_or(1)
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn item(&self) -> f64 {
        self.data[0]
    }

    fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

/// Handle to a node recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    MatMul(NodeId, NodeId),
    AddBias(NodeId, NodeId),
    Neg(NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId),
    Sigmoid(NodeId),
    LogSigmoid(NodeId),
    Log(NodeId),
    Exp(NodeId),
    Sqrt(NodeId),
    Relu(NodeId),
    Tanh(NodeId),
    Sum(NodeId),
    Mean(NodeId),
    SumRows(NodeId),
    Softmax(NodeId),
    Dot(NodeId, NodeId),
    L2Norm(NodeId),
    Select(NodeId, usize),
    Concat(Vec<NodeId>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    /// Present for leaves only.
    grad: Option<Tensor>,
}

/// Append-only computation tape.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
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

    /// Trainable leaf: receives gradients on backward.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push_leaf(value, true)
    }

    /// Frozen leaf. Its accumulator exists but always stays zero.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push_leaf(value, false)
    }

    fn push_leaf(&mut self, value: Tensor, requires_grad: bool) -> NodeId {
        let grad = Some(Tensor::zeros(value.shape()));
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
            grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor, op: Op, parents: &[NodeId]) -> NodeId {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Accumulated gradient of a leaf; `None` for interior nodes.
    pub fn grad(&self, id: NodeId) -> Option<&Tensor> {
        self.nodes[id.0].grad.as_ref()
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            if let Some(g) = node.grad.as_mut() {
                g.data.iter_mut().for_each(|v| *v = 0.0);
            }
        }
    }

    fn binary_elementwise(
        &self,
        op: &'static str,
        a: NodeId,
        b: NodeId,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape == tb.shape {
            let data = ta.data.iter().zip(&tb.data).map(|(&x, &y)| f(x, y)).collect();
            Ok(Tensor {
                shape: ta.shape.clone(),
                data,
            })
        } else if tb.is_scalar() {
            let y = tb.item();
            Ok(ta.map(|x| f(x, y)))
        } else if ta.is_scalar() {
            let x = ta.item();
            Ok(tb.map(|y| f(x, y)))
        } else {
            Err(AutodiffError::ShapeMismatch {
                op,
                lhs: ta.shape.clone(),
                rhs: tb.shape.clone(),
            })
        }
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.binary_elementwise("add", a, b, |x, y| x + y)?;
        Ok(self.push(v, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.binary_elementwise("sub", a, b, |x, y| x - y)?;
        Ok(self.push(v, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.binary_elementwise("mul", a, b, |x, y| x * y)?;
        Ok(self.push(v, Op::Mul(a, b), &[a, b]))
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if let Some(&z) = self.value(b).data.iter().find(|v| **v == 0.0) {
            return Err(AutodiffError::Domain { op: "div", value: z });
        }
        let v = self.binary_elementwise("div", a, b, |x, y| x / y)?;
        Ok(self.push(v, Op::Div(a, b), &[a, b]))
    }

    /// `(m×k) · (k×n) → (m×n)`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ta, tb) = (self.value(a), self.value(b));
        for t in [ta, tb] {
            if t.shape.len() != 2 {
                return Err(AutodiffError::Rank {
                    op: "matmul",
                    expected: 2,
                    shape: t.shape.clone(),
                });
            }
        }
        let (m, k, n) = (ta.shape[0], ta.shape[1], tb.shape[1]);
        if tb.shape[0] != k {
            return Err(AutodiffError::ShapeMismatch {
                op: "matmul",
                lhs: ta.shape.clone(),
                rhs: tb.shape.clone(),
            });
        }
        let data = matmul_raw(&ta.data, &tb.data, m, k, n);
        let v = Tensor {
            shape: vec![m, n],
            data,
        };
        Ok(self.push(v, Op::MatMul(a, b), &[a, b]))
    }

    /// Adds a length-`n` bias vector to every row of an `m×n` matrix.
    pub fn add_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let (tx, tb) = (self.value(x), self.value(bias));
        if tx.shape.len() != 2 || tb.shape.len() != 1 || tx.shape[1] != tb.shape[0] {
            return Err(AutodiffError::ShapeMismatch {
                op: "add_bias",
                lhs: tx.shape.clone(),
                rhs: tb.shape.clone(),
            });
        }
        let n = tb.shape[0];
        let data = tx
            .data
            .iter()
            .enumerate()
            .map(|(i, &v)| v + tb.data[i % n])
            .collect();
        let v = Tensor {
            shape: tx.shape.clone(),
            data,
        };
        Ok(self.push(v, Op::AddBias(x, bias), &[x, bias]))
    }

    pub fn neg(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| -x);
        self.push(v, Op::Neg(a), &[a])
    }

    /// Multiplies by a constant.
    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.value(a).map(|x| x * c);
        self.push(v, Op::Scale(a, c), &[a])
    }

    /// Adds a constant.
    pub fn add_scalar(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.value(a).map(|x| x + c);
        self.push(v, Op::AddScalar(a), &[a])
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(sigmoid);
        self.push(v, Op::Sigmoid(a), &[a])
    }

    /// `log(sigmoid(x))` evaluated without forming the sigmoid.
    pub fn log_sigmoid(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(log_sigmoid);
        self.push(v, Op::LogSigmoid(a), &[a])
    }

    pub fn log(&mut self, a: NodeId) -> Result<NodeId> {
        if let Some(&bad) = self.value(a).data.iter().find(|v| !(**v > 0.0)) {
            return Err(AutodiffError::Domain {
                op: "log",
                value: bad,
            });
        }
        let v = self.value(a).map(f64::ln);
        Ok(self.push(v, Op::Log(a), &[a]))
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(f64::exp);
        self.push(v, Op::Exp(a), &[a])
    }

    pub fn sqrt(&mut self, a: NodeId) -> Result<NodeId> {
        if let Some(&bad) = self.value(a).data.iter().find(|v| !(**v >= 0.0)) {
            return Err(AutodiffError::Domain {
                op: "sqrt",
                value: bad,
            });
        }
        let v = self.value(a).map(f64::sqrt);
        Ok(self.push(v, Op::Sqrt(a), &[a]))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push(v, Op::Relu(a), &[a])
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(f64::tanh);
        self.push(v, Op::Tanh(a), &[a])
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s = self.value(a).data.iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let t = self.value(a);
        let s = t.data.iter().sum::<f64>() / t.numel() as f64;
        self.push(Tensor::scalar(s), Op::Mean(a), &[a])
    }

    /// Sums each row of an `m×n` matrix into a length-`m` vector.
    pub fn sum_rows(&mut self, a: NodeId) -> Result<NodeId> {
        let t = self.value(a);
        if t.shape.len() != 2 {
            return Err(AutodiffError::Rank {
                op: "sum_rows",
                expected: 2,
                shape: t.shape.clone(),
            });
        }
        let data = t.data.chunks(t.shape[1]).map(|r| r.iter().sum()).collect();
        let v = Tensor::vector(data);
        Ok(self.push(v, Op::SumRows(a), &[a]))
    }

    pub fn softmax(&mut self, a: NodeId) -> Result<NodeId> {
        let t = self.value(a);
        if t.shape.len() != 1 {
            return Err(AutodiffError::Rank {
                op: "softmax",
                expected: 1,
                shape: t.shape.clone(),
            });
        }
        let v = Tensor::vector(softmax(&t.data));
        Ok(self.push(v, Op::Softmax(a), &[a]))
    }

    /// Inner product of two equally shaped tensors.
    pub fn dot(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape != tb.shape {
            return Err(AutodiffError::ShapeMismatch {
                op: "dot",
                lhs: ta.shape.clone(),
                rhs: tb.shape.clone(),
            });
        }
        let s = ta.data.iter().zip(&tb.data).map(|(x, y)| x * y).sum();
        Ok(self.push(Tensor::scalar(s), Op::Dot(a, b), &[a, b]))
    }

    pub fn l2_norm(&mut self, a: NodeId) -> NodeId {
        let s = self.value(a).data.iter().map(|x| x * x).sum::<f64>().sqrt();
        self.push(Tensor::scalar(s), Op::L2Norm(a), &[a])
    }

    /// Picks one element of a vector as a one-element tensor.
    pub fn select(&mut self, a: NodeId, index: usize) -> Result<NodeId> {
        let t = self.value(a);
        if index >= t.numel() {
            return Err(AutodiffError::Index {
                index,
                len: t.numel(),
            });
        }
        let v = Tensor::scalar(t.data[index]);
        Ok(self.push(v, Op::Select(a, index), &[a]))
    }

    /// Concatenates vectors end to end, or matrices along rows.
    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let first = parts.first().ok_or(AutodiffError::Empty("concat"))?;
        let head = self.value(*first).shape.clone();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            if t.shape.len() != head.len() || t.shape[1..] != head[1..] {
                return Err(AutodiffError::ShapeMismatch {
                    op: "concat",
                    lhs: head,
                    rhs: t.shape.clone(),
                });
            }
            rows += t.shape[0];
            data.extend_from_slice(&t.data);
        }
        let mut shape = head;
        shape[0] = rows;
        let v = Tensor { shape, data };
        Ok(self.push(v, Op::Concat(parts.to_vec()), parts))
    }

    /// Reverse pass from a scalar root. Leaf gradients are added to their
    /// accumulators, so repeated calls without [`Graph::zero_grad`] accumulate.
    pub fn backward(&mut self, root: NodeId) -> Result<()> {
        let root_value = &self.nodes[root.0].value;
        if !root_value.is_scalar() {
            return Err(AutodiffError::NonScalarRoot(root_value.shape.clone()));
        }
        let mut adjoints: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        adjoints[root.0] = Some(vec![1.0]);

        for i in (0..=root.0).rev() {
            let Some(upstream) = adjoints[i].take() else {
                continue;
            };
            if !self.nodes[i].requires_grad {
                continue;
            }
            let node = &self.nodes[i];
            if let Op::Leaf = node.op {
                let acc = self.nodes[i].grad.as_mut().expect("leaf accumulator");
                for (a, u) in acc.data.iter_mut().zip(&upstream) {
                    *a += u;
                }
                continue;
            }
            for (parent, contribution) in self.local_gradients(i, &upstream) {
                if !self.nodes[parent.0].requires_grad {
                    continue;
                }
                match adjoints[parent.0].as_mut() {
                    Some(existing) => {
                        for (e, c) in existing.iter_mut().zip(&contribution) {
                            *e += c;
                        }
                    }
                    None => adjoints[parent.0] = Some(contribution),
                }
            }
        }
        Ok(())
    }

    /// Vector-Jacobian products of node `i` with respect to each parent.
    fn local_gradients(&self, i: usize, g: &[f64]) -> Vec<(NodeId, Vec<f64>)> {
        let node = &self.nodes[i];
        let out = &node.value.data;
        let val = |id: NodeId| &self.nodes[id.0].value;
        let unary = |a: NodeId, f: &dyn Fn(usize) -> f64| {
            vec![(a, (0..g.len()).map(f).collect::<Vec<_>>())]
        };
        match &node.op {
            Op::Leaf => Vec::new(),
            Op::Add(a, b) => vec![
                (*a, reduce_to(val(*a), g.to_vec())),
                (*b, reduce_to(val(*b), g.to_vec())),
            ],
            Op::Sub(a, b) => vec![
                (*a, reduce_to(val(*a), g.to_vec())),
                (*b, reduce_to(val(*b), g.iter().map(|x| -x).collect())),
            ],
            Op::Mul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let ga = g.iter().enumerate().map(|(j, u)| u * at(tb, j)).collect();
                let gb = g.iter().enumerate().map(|(j, u)| u * at(ta, j)).collect();
                vec![(*a, reduce_to(ta, ga)), (*b, reduce_to(tb, gb))]
            }
            Op::Div(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let ga = g.iter().enumerate().map(|(j, u)| u / at(tb, j)).collect();
                let gb = g
                    .iter()
                    .enumerate()
                    .map(|(j, u)| {
                        let y = at(tb, j);
                        -u * at(ta, j) / (y * y)
                    })
                    .collect();
                vec![(*a, reduce_to(ta, ga)), (*b, reduce_to(tb, gb))]
            }
            Op::MatMul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (m, k, n) = (ta.shape[0], ta.shape[1], tb.shape[1]);
                // dA = G · Bᵀ, dB = Aᵀ · G
                let mut ga = vec![0.0; m * k];
                for r in 0..m {
                    for c in 0..k {
                        let mut s = 0.0;
                        for j in 0..n {
                            s += g[r * n + j] * tb.data[c * n + j];
                        }
                        ga[r * k + c] = s;
                    }
                }
                let mut gb = vec![0.0; k * n];
                for r in 0..m {
                    for c in 0..k {
                        let x = ta.data[r * k + c];
                        for j in 0..n {
                            gb[c * n + j] += x * g[r * n + j];
                        }
                    }
                }
                vec![(*a, ga), (*b, gb)]
            }
            Op::AddBias(x, bias) => {
                let n = val(*bias).numel();
                let mut gb = vec![0.0; n];
                for (j, u) in g.iter().enumerate() {
                    gb[j % n] += u;
                }
                vec![(*x, g.to_vec()), (*bias, gb)]
            }
            Op::Neg(a) => unary(*a, &|j| -g[j]),
            Op::Scale(a, c) => unary(*a, &|j| g[j] * c),
            Op::AddScalar(a) => vec![(*a, g.to_vec())],
            Op::Sigmoid(a) => unary(*a, &|j| g[j] * out[j] * (1.0 - out[j])),
            Op::LogSigmoid(a) => {
                let x = &val(*a).data;
                unary(*a, &|j| g[j] * sigmoid(-x[j]))
            }
            Op::Log(a) => {
                let x = &val(*a).data;
                unary(*a, &|j| g[j] / x[j])
            }
            Op::Exp(a) => unary(*a, &|j| g[j] * out[j]),
            Op::Sqrt(a) => unary(*a, &|j| {
                if out[j] > 0.0 {
                    g[j] / (2.0 * out[j])
                } else {
                    0.0
                }
            }),
            Op::Relu(a) => {
                let x = &val(*a).data;
                unary(*a, &|j| if x[j] > 0.0 { g[j] } else { 0.0 })
            }
            Op::Tanh(a) => unary(*a, &|j| g[j] * (1.0 - out[j] * out[j])),
            Op::Sum(a) => vec![(*a, vec![g[0]; val(*a).numel()])],
            Op::Mean(a) => {
                let n = val(*a).numel();
                vec![(*a, vec![g[0] / n as f64; n])]
            }
            Op::SumRows(a) => {
                let t = val(*a);
                let cols = t.shape[1];
                vec![(*a, (0..t.numel()).map(|j| g[j / cols]).collect())]
            }
            Op::Softmax(a) => {
                let gs: f64 = g.iter().zip(out).map(|(u, s)| u * s).sum();
                unary(*a, &|j| out[j] * (g[j] - gs))
            }
            Op::Dot(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                vec![
                    (*a, tb.data.iter().map(|y| g[0] * y).collect()),
                    (*b, ta.data.iter().map(|x| g[0] * x).collect()),
                ]
            }
            Op::L2Norm(a) => {
                let t = val(*a);
                let norm = out[0];
                let grad = if norm > 0.0 {
                    t.data.iter().map(|x| g[0] * x / norm).collect()
                } else {
                    vec![0.0; t.numel()]
                };
                vec![(*a, grad)]
            }
            Op::Select(a, index) => {
                let mut grad = vec![0.0; val(*a).numel()];
                grad[*index] = g[0];
                vec![(*a, grad)]
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                parts
                    .iter()
                    .map(|p| {
                        let n = val(*p).numel();
                        let slice = g[offset..offset + n].to_vec();
                        offset += n;
                        (*p, slice)
                    })
                    .collect()
            }
        }
    }
}

/// Element `j` of `t`, treating one-element tensors as broadcast scalars.
fn at(t: &Tensor, j: usize) -> f64 {
    if t.is_scalar() {
        t.data[0]
    } else {
        t.data[j]
    }
}

/// Folds a broadcast gradient back onto a one-element operand.
fn reduce_to(target: &Tensor, grad: Vec<f64>) -> Vec<f64> {
    if target.numel() == grad.len() {
        grad
    } else {
        vec![grad.iter().sum()]
    }
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for r in 0..m {
        for c in 0..k {
            let x = a[r * k + c];
            let row = &b[c * n..(c + 1) * n];
            for (o, y) in out[r * n..(r + 1) * n].iter_mut().zip(row) {
                *o += x * y;
            }
        }
    }
    out
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn log_sigmoid(x: f64) -> f64 {
    x.min(0.0) - (-x.abs()).exp().ln_1p()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.iter().map(|e| e / total).collect()
}
