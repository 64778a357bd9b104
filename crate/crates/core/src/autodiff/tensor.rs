use std::fmt;
use std::sync::{Arc, Mutex, MutexGuard};

use super::op::{self, OpKind, View};
use crate::error::{contract, Error, Result};

/// Dense row-major `f64` array, optionally attached to a [`Graph`].
///
/// Detached tensors are immutable values and cheap to clone (the buffer is
/// shared). A tensor is attached when it is a watched leaf or the result of an
/// op with at least one attached input.
#[derive(Clone)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Arc<[f64]>,
    node: Option<NodeRef>,
}

#[derive(Clone)]
pub(crate) struct NodeRef {
    pub graph: Graph,
    pub id: usize,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(contract(format!("tensor shape {shape:?} has a zero dimension")));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(contract(format!(
                "tensor shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::Numeric(format!("non-finite value {} at index {i}", data[i])));
        }
        Ok(Self { shape, data: data.into(), node: None })
    }

    pub fn scalar(x: f64) -> Result<Self> {
        Self::new(vec![], vec![x])
    }

    pub fn vector(data: Vec<f64>) -> Result<Self> {
        Self::new(vec![data.len()], data)
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(contract("from_rows: ragged rows"));
        }
        Self::matrix(rows.len(), cols, rows.concat())
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![value; n].into(), node: None }
    }

    pub(crate) fn from_parts(shape: Vec<usize>, data: Arc<[f64]>, node: Option<NodeRef>) -> Self {
        Self { shape, data, node }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.is_scalar() {
            Ok(self.data[0])
        } else {
            Err(contract(format!("item() on tensor of shape {:?}", self.shape)))
        }
    }

    pub fn is_attached(&self) -> bool {
        self.node.is_some()
    }

    pub fn graph(&self) -> Option<&Graph> {
        self.node.as_ref().map(|n| &n.graph)
    }

    pub(crate) fn node(&self) -> Option<&NodeRef> {
        self.node.as_ref()
    }

    /// Same values, no graph.
    pub fn detach(&self) -> Tensor {
        Self { shape: self.shape.clone(), data: Arc::clone(&self.data), node: None }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.data.to_vec()
    }

    /// Rows of a rank-2 tensor.
    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        let width = self.shape.last().copied().unwrap_or(1);
        self.data.chunks(width)
    }

    fn view(&self) -> View<'_> {
        View { shape: &self.shape, data: &self.data }
    }

    /// Bitwise equality of shape and values; graph attachment is ignored.
    pub fn bit_eq(&self, other: &Tensor) -> bool {
        self.shape == other.shape
            && self.data.iter().zip(other.data.iter()).all(|(a, b)| a.to_bits() == b.to_bits())
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        forward(OpKind::Add, &[self, other])
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        forward(OpKind::Sub, &[self, other])
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        forward(OpKind::MulElementwise, &[self, other])
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        forward(OpKind::MatMul, &[self, other])
    }

    pub fn relu(&self) -> Result<Tensor> {
        forward(OpKind::Relu, &[self])
    }

    pub fn sigmoid(&self) -> Result<Tensor> {
        forward(OpKind::Sigmoid, &[self])
    }

    pub fn exp(&self) -> Result<Tensor> {
        forward(OpKind::Exp, &[self])
    }

    pub fn square(&self) -> Result<Tensor> {
        forward(OpKind::Square, &[self])
    }

    pub fn neg(&self) -> Result<Tensor> {
        forward(OpKind::Negate, &[self])
    }

    pub fn scale(&self, c: f64) -> Result<Tensor> {
        forward(OpKind::ScaleByConstant(c), &[self])
    }

    pub fn sum_all(&self) -> Result<Tensor> {
        forward(OpKind::SumAll, &[self])
    }

    pub fn mean_all(&self) -> Result<Tensor> {
        forward(OpKind::MeanAll, &[self])
    }

    pub fn logsumexp_last_axis(&self) -> Result<Tensor> {
        forward(OpKind::LogSumExpLastAxis, &[self])
    }

    pub fn sq_euclidean_rowwise(&self, other: &Tensor) -> Result<Tensor> {
        forward(OpKind::SqEuclideanRowwise, &[self, other])
    }

    pub fn transpose(&self) -> Result<Tensor> {
        forward(OpKind::Transpose, &[self])
    }

    pub fn sum_last_axis(&self) -> Result<Tensor> {
        forward(OpKind::SumLastAxis, &[self])
    }

    pub fn broadcast_last_axis(&self, n: usize) -> Result<Tensor> {
        forward(OpKind::BroadcastLastAxis(n), &[self])
    }

    pub fn broadcast_rows(&self, m: usize) -> Result<Tensor> {
        forward(OpKind::BroadcastRows(m), &[self])
    }

    pub fn expand_scalar(&self, shape: &[usize]) -> Result<Tensor> {
        forward(OpKind::ExpandScalar(shape.to_vec()), &[self])
    }

    pub fn slice_last_axis(&self, start: usize, len: usize) -> Result<Tensor> {
        forward(OpKind::SliceLastAxis { start, len }, &[self])
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if shape == self.shape.as_slice() {
            return Ok(self.clone());
        }
        forward(OpKind::Reshape(shape.to_vec()), &[self])
    }

    pub fn concat_last_axis(parts: &[&Tensor]) -> Result<Tensor> {
        forward(OpKind::ConcatLastAxis, parts)
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("data", &&self.data[..])
            .field("node", &self.node.as_ref().map(|n| n.id))
            .finish()
    }
}

impl PartialEq for Tensor {
    fn eq(&self, other: &Self) -> bool {
        self.shape == other.shape && self.data == other.data
    }
}

/// Applies `kind` to `inputs`, recording a node when any input is attached.
pub fn forward(kind: OpKind, inputs: &[&Tensor]) -> Result<Tensor> {
    let views: Vec<View<'_>> = inputs.iter().map(|t| t.view()).collect();
    let (shape, data) = op::eval(&kind, &views)?;
    if let Some(i) = data.iter().position(|x| !x.is_finite()) {
        return Err(Error::Numeric(format!(
            "{} produced non-finite value {} at index {i}",
            kind.name(),
            data[i]
        )));
    }
    let data: Arc<[f64]> = data.into();

    let mut graph: Option<&Graph> = None;
    for t in inputs {
        if let Some(n) = &t.node {
            match graph {
                None => graph = Some(&n.graph),
                Some(g) if g.same(&n.graph) => {}
                Some(_) => {
                    return Err(contract(format!("{}: inputs belong to different graphs", kind.name())))
                }
            }
        }
    }
    let node = match graph {
        None => None,
        Some(g) => {
            let recorded = inputs
                .iter()
                .map(|t| RecordedInput {
                    id: t.node.as_ref().map(|n| n.id),
                    shape: t.shape.clone(),
                    data: Arc::clone(&t.data),
                })
                .collect();
            let id = g.push(Node { op: Some(kind), inputs: recorded, shape: shape.clone(), value: Arc::clone(&data) });
            Some(NodeRef { graph: g.clone(), id })
        }
    };
    Ok(Tensor { shape, data, node })
}

#[derive(Clone)]
pub(crate) struct RecordedInput {
    pub id: Option<usize>,
    pub shape: Vec<usize>,
    pub data: Arc<[f64]>,
}

#[derive(Clone)]
pub(crate) struct Node {
    /// `None` for leaves.
    pub op: Option<OpKind>,
    pub inputs: Vec<RecordedInput>,
    pub shape: Vec<usize>,
    pub value: Arc<[f64]>,
}

#[derive(Default)]
struct GraphInner {
    nodes: Vec<Node>,
}

/// Append-only tape of recorded operations.
///
/// Node `k` only ever references inputs with ids below `k`, so reverse id
/// order is a valid topological order for backpropagation.
#[derive(Clone, Default)]
pub struct Graph {
    inner: Arc<Mutex<GraphInner>>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn lock(&self) -> MutexGuard<'_, GraphInner> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub(crate) fn same(&self, other: &Graph) -> bool {
        Arc::ptr_eq(&self.inner, &other.inner)
    }

    fn push(&self, node: Node) -> usize {
        let mut g = self.lock();
        g.nodes.push(node);
        g.nodes.len() - 1
    }

    pub fn len(&self) -> usize {
        self.lock().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Records `value` as a differentiable leaf on this graph.
    pub fn watch(&self, value: &Tensor) -> Tensor {
        let id = self.push(Node {
            op: None,
            inputs: Vec::new(),
            shape: value.shape.clone(),
            value: Arc::clone(&value.data),
        });
        Tensor { shape: value.shape.clone(), data: Arc::clone(&value.data), node: Some(NodeRef { graph: self.clone(), id }) }
    }

    pub(crate) fn node(&self, id: usize) -> Node {
        self.lock().nodes[id].clone()
    }

    /// The recorded output of node `id` as an attached tensor.
    pub(crate) fn tensor(&self, id: usize) -> Tensor {
        let g = self.lock();
        let n = &g.nodes[id];
        Tensor { shape: n.shape.clone(), data: Arc::clone(&n.value), node: Some(NodeRef { graph: self.clone(), id }) }
    }
}

impl fmt::Debug for Graph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Graph").field("nodes", &self.len()).finish()
    }
}
