use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::kernels::{gemm, matmul};
use super::optim::{ParamId, ParamStore};
use super::{GraphError, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Operation kinds understood by [`Graph::apply`].
///
/// `Add` accepts either equal shapes or a 1-D right operand matching the
/// last axis of the left one (bias broadcast). Every other binary kind
/// requires equal shapes.
#[derive(Clone, Debug, PartialEq)]
pub enum OpKind {
    MatMul,
    Add,
    Sub,
    Mul,
    Scale(f64),
    AddScalar(f64),
    /// Concatenate two tensors along the last axis.
    Concat,
    /// `[n, d] -> [d]`.
    MeanRows,
    Cos,
    Sigmoid,
    Tanh,
    Relu,
    /// Along the last axis.
    Softmax,
    Log,
    /// Row lookup into a `[n, d]` table.
    Gather(Vec<usize>),
    /// Row `i` of the `[len, d]` input is averaged into output row
    /// `index[i]`; groups that receive nothing stay zero.
    ScatterMean { index: Vec<usize>, groups: usize },
    /// Inputs `x: [B, H, W]`, `kernel: [C, H, K]` (K odd), `bias: [C]`;
    /// output `[B, C, W]` with zero padding of `(K - 1) / 2` on both sides.
    Conv1d,
    Reshape(Vec<usize>),
    /// `[d0, d1, ..] -> [d0, d1 * ..]`.
    Flatten,
    /// Inverted dropout with the given drop rate; identity outside training.
    Dropout(f64),
    /// `candidates: [E, d]` against `queries: [B, d]` (or `[d]`) gives
    /// `[B, E]` (or `[E]`) dot products.
    DotRows,
    /// Summed softmax cross-entropy of `[B, C]` logits (or `[C]`) against
    /// one target class per row.
    CrossEntropy(Vec<usize>),
    Sum,
    /// Per-row `(x - mean) / sqrt(var + eps)` along the last axis.
    Standardize(f64),
}

impl OpKind {
    pub fn name(&self) -> &'static str {
        match self {
            OpKind::MatMul => "matmul",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::Scale(_) => "scale",
            OpKind::AddScalar(_) => "add_scalar",
            OpKind::Concat => "concat",
            OpKind::MeanRows => "mean_rows",
            OpKind::Cos => "cos",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Tanh => "tanh",
            OpKind::Relu => "relu",
            OpKind::Softmax => "softmax",
            OpKind::Log => "log",
            OpKind::Gather(_) => "gather",
            OpKind::ScatterMean { .. } => "scatter_mean",
            OpKind::Conv1d => "conv1d",
            OpKind::Reshape(_) => "reshape",
            OpKind::Flatten => "flatten",
            OpKind::Dropout(_) => "dropout",
            OpKind::DotRows => "dot_rows",
            OpKind::CrossEntropy(_) => "cross_entropy",
            OpKind::Sum => "sum",
            OpKind::Standardize(_) => "standardize",
        }
    }

    fn arity(&self) -> usize {
        match self {
            OpKind::MatMul
            | OpKind::Add
            | OpKind::Sub
            | OpKind::Mul
            | OpKind::Concat
            | OpKind::DotRows => 2,
            OpKind::Conv1d => 3,
            _ => 1,
        }
    }
}

/// Parses the parameter-free kinds by name.
impl FromStr for OpKind {
    type Err = GraphError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "matmul" => OpKind::MatMul,
            "add" => OpKind::Add,
            "sub" => OpKind::Sub,
            "mul" => OpKind::Mul,
            "concat" => OpKind::Concat,
            "mean_rows" => OpKind::MeanRows,
            "cos" => OpKind::Cos,
            "sigmoid" => OpKind::Sigmoid,
            "tanh" => OpKind::Tanh,
            "relu" => OpKind::Relu,
            "softmax" => OpKind::Softmax,
            "log" => OpKind::Log,
            "conv1d" => OpKind::Conv1d,
            "flatten" => OpKind::Flatten,
            "dot_rows" => OpKind::DotRows,
            "sum" => OpKind::Sum,
            other => return Err(GraphError::UnknownOp(other.to_string())),
        })
    }
}

#[derive(Clone, Debug)]
enum Origin {
    Constant,
    Input,
    Param(ParamId),
    Op(OpKind),
}

#[derive(Debug)]
struct Node {
    origin: Origin,
    inputs: Vec<NodeId>,
    value: Tensor,
    requires_grad: bool,
    /// Dropout mask or cross-entropy probabilities.
    cache: Option<Vec<f64>>,
}

/// Append-only computation tape.
pub struct Graph {
    nodes: Vec<Node>,
    training: bool,
    rng: ChaCha8Rng,
}

/// Adjoints of every node after a reverse sweep.
pub struct Gradients {
    adjoints: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// `None` when the node does not influence the loss.
    pub fn wrt(&self, node: NodeId) -> Option<&[f64]> {
        self.adjoints.get(node.0).and_then(|a| a.as_deref())
    }
}

impl Graph {
    /// `training` enables dropout; `seed` fixes its masks.
    pub fn new(training: bool, seed: u64) -> Self {
        Graph {
            nodes: Vec::new(),
            training,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn inference() -> Self {
        Graph::new(false, 0)
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, node: NodeId) -> &Tensor {
        &self.nodes[node.0].value
    }

    pub fn shape(&self, node: NodeId) -> &[usize] {
        self.nodes[node.0].value.shape()
    }

    /// Parameter ids entering this graph, in insertion order.
    pub fn params(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.nodes.iter().filter_map(|n| match n.origin {
            Origin::Param(id) => Some(id),
            _ => None,
        })
    }

    fn push_leaf(&mut self, origin: Origin, value: Tensor, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            origin,
            inputs: Vec::new(),
            value,
            requires_grad,
            cache: None,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push_leaf(Origin::Constant, value, false)
    }

    /// A leaf whose adjoint is tracked (see [`Gradients::wrt`]).
    pub fn input(&mut self, value: Tensor) -> NodeId {
        self.push_leaf(Origin::Input, value, true)
    }

    /// Copies the current value of a parameter into the tape.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> NodeId {
        let mut value = store.get(id).tensor().clone();
        value.set_grad(None);
        self.push_leaf(Origin::Param(id), value, true)
    }

    /// Records `kind` applied to `inputs` and returns the new node.
    pub fn apply(&mut self, kind: OpKind, inputs: &[NodeId]) -> Result<NodeId, GraphError> {
        let op = kind.name();
        if inputs.len() != kind.arity() {
            return Err(GraphError::Invalid {
                op,
                detail: format!("expected {} inputs, got {}", kind.arity(), inputs.len()),
            });
        }
        if let Some(bad) = inputs.iter().find(|i| i.0 >= self.nodes.len()) {
            return Err(GraphError::Invalid {
                op,
                detail: format!("unknown node {}", bad.0),
            });
        }
        let (value, cache) = self.forward(&kind, inputs)?;
        if !value.is_finite() {
            return Err(GraphError::NonFinite { op });
        }
        let requires_grad = inputs.iter().any(|i| self.nodes[i.0].requires_grad);
        self.nodes.push(Node {
            origin: Origin::Op(kind),
            inputs: inputs.to_vec(),
            value,
            requires_grad,
            cache,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    fn forward(
        &mut self,
        kind: &OpKind,
        inputs: &[NodeId],
    ) -> Result<(Tensor, Option<Vec<f64>>), GraphError> {
        let op = kind.name();
        let a = &self.nodes[inputs[0].0].value;
        let b = inputs.get(1).map(|i| &self.nodes[i.0].value);
        let shape_err = |lhs: &Tensor, rhs: &Tensor| GraphError::Shape {
            op,
            lhs: lhs.shape().to_vec(),
            rhs: rhs.shape().to_vec(),
        };
        let out = match kind {
            OpKind::MatMul => {
                let b = b.unwrap();
                if a.shape().len() != 2 || b.shape().len() != 2 || a.shape()[1] != b.shape()[0] {
                    return Err(shape_err(a, b));
                }
                let (n, k, m) = (a.shape()[0], a.shape()[1], b.shape()[1]);
                Tensor::from_parts(vec![n, m], matmul(a.values(), b.values(), n, k, m))
            }
            OpKind::Add => {
                let b = b.unwrap();
                if a.shape() == b.shape() {
                    zip_map(a, b, |x, y| x + y)
                } else if b.shape().len() == 1 && a.shape().len() >= 2 && a.last_dim() == b.len() {
                    let d = b.len();
                    let values = a
                        .values()
                        .iter()
                        .enumerate()
                        .map(|(i, x)| x + b.values()[i % d])
                        .collect();
                    Tensor::from_parts(a.shape().to_vec(), values)
                } else {
                    return Err(shape_err(a, b));
                }
            }
            OpKind::Sub | OpKind::Mul => {
                let b = b.unwrap();
                if a.shape() != b.shape() {
                    return Err(shape_err(a, b));
                }
                if matches!(kind, OpKind::Sub) {
                    zip_map(a, b, |x, y| x - y)
                } else {
                    zip_map(a, b, |x, y| x * y)
                }
            }
            OpKind::Scale(c) => map(a, |x| x * c),
            OpKind::AddScalar(c) => map(a, |x| x + c),
            OpKind::Concat => {
                let b = b.unwrap();
                let (sa, sb) = (a.shape(), b.shape());
                if sa.is_empty() || sa.len() != sb.len() || sa[..sa.len() - 1] != sb[..sb.len() - 1] {
                    return Err(shape_err(a, b));
                }
                let (p, q) = (a.last_dim(), b.last_dim());
                let rows = a.rows();
                let mut values = Vec::with_capacity(a.len() + b.len());
                for r in 0..rows {
                    values.extend_from_slice(&a.values()[r * p..(r + 1) * p]);
                    values.extend_from_slice(&b.values()[r * q..(r + 1) * q]);
                }
                let mut shape = sa.to_vec();
                *shape.last_mut().unwrap() = p + q;
                Tensor::from_parts(shape, values)
            }
            OpKind::MeanRows => {
                if a.shape().len() != 2 {
                    return Err(invalid(op, format!("expected [n, d], got {:?}", a.shape())));
                }
                let (n, d) = (a.shape()[0], a.shape()[1]);
                let mut values = vec![0.0; d];
                for r in 0..n {
                    for (acc, x) in values.iter_mut().zip(a.row(r)) {
                        *acc += x;
                    }
                }
                values.iter_mut().for_each(|v| *v /= n as f64);
                Tensor::from_parts(vec![d], values)
            }
            OpKind::Cos => map(a, f64::cos),
            OpKind::Sigmoid => map(a, sigmoid),
            OpKind::Tanh => map(a, f64::tanh),
            OpKind::Relu => map(a, |x| x.max(0.0)),
            OpKind::Log => {
                if let Some(x) = a.values().iter().find(|x| **x <= 0.0) {
                    return Err(invalid(op, format!("non-positive input {x}")));
                }
                map(a, f64::ln)
            }
            OpKind::Softmax => {
                let d = a.last_dim();
                let mut values = a.values().to_vec();
                values.chunks_mut(d).for_each(softmax_in_place);
                Tensor::from_parts(a.shape().to_vec(), values)
            }
            OpKind::Gather(index) => {
                if a.shape().len() != 2 {
                    return Err(invalid(op, format!("expected [n, d] table, got {:?}", a.shape())));
                }
                if index.is_empty() {
                    return Err(invalid(op, "empty index".into()));
                }
                let (n, d) = (a.shape()[0], a.shape()[1]);
                if let Some(i) = index.iter().find(|&&i| i >= n) {
                    return Err(invalid(op, format!("row {i} out of range for {n} rows")));
                }
                let mut values = Vec::with_capacity(index.len() * d);
                for &i in index {
                    values.extend_from_slice(a.row(i));
                }
                Tensor::from_parts(vec![index.len(), d], values)
            }
            OpKind::ScatterMean { index, groups } => {
                if a.shape().len() != 2 || a.shape()[0] != index.len() {
                    return Err(invalid(
                        op,
                        format!("{} indices for input {:?}", index.len(), a.shape()),
                    ));
                }
                if *groups == 0 {
                    return Err(invalid(op, "zero groups".into()));
                }
                if let Some(g) = index.iter().find(|&&g| g >= *groups) {
                    return Err(invalid(op, format!("group {g} out of range for {groups}")));
                }
                let d = a.shape()[1];
                let counts = group_counts(index, *groups);
                let mut values = vec![0.0; groups * d];
                for (r, &g) in index.iter().enumerate() {
                    let scale = 1.0 / counts[g];
                    for (acc, x) in values[g * d..(g + 1) * d].iter_mut().zip(a.row(r)) {
                        *acc += x * scale;
                    }
                }
                Tensor::from_parts(vec![*groups, d], values)
            }
            OpKind::Conv1d => {
                let k = b.unwrap();
                let bias = &self.nodes[inputs[2].0].value;
                let (xs, ks) = (a.shape(), k.shape());
                if xs.len() != 3 || ks.len() != 3 || xs[1] != ks[1] || ks[2] % 2 == 0 {
                    return Err(shape_err(a, k));
                }
                if bias.shape() != [ks[0]] {
                    return Err(shape_err(k, bias));
                }
                let dims = ConvDims {
                    batch: xs[0],
                    height: xs[1],
                    width: xs[2],
                    channels: ks[0],
                    kernel: ks[2],
                };
                let values = conv1d_forward(a.values(), k.values(), bias.values(), &dims);
                Tensor::from_parts(vec![dims.batch, dims.channels, dims.width], values)
            }
            OpKind::Reshape(shape) => {
                if shape.iter().product::<usize>() != a.len() || shape.contains(&0) {
                    return Err(GraphError::Shape {
                        op,
                        lhs: a.shape().to_vec(),
                        rhs: shape.clone(),
                    });
                }
                Tensor::from_parts(shape.clone(), a.values().to_vec())
            }
            OpKind::Flatten => {
                let shape = match a.shape() {
                    s if s.len() <= 2 => s.to_vec(),
                    s => vec![s[0], s[1..].iter().product()],
                };
                Tensor::from_parts(shape, a.values().to_vec())
            }
            OpKind::Dropout(rate) => {
                if !(0.0..1.0).contains(rate) {
                    return Err(invalid(op, format!("rate {rate} outside [0, 1)")));
                }
                if !self.training || *rate == 0.0 {
                    a.clone()
                } else {
                    let keep = 1.0 - rate;
                    let mask: Vec<f64> = (0..a.len())
                        .map(|_| {
                            if self.rng.gen::<f64>() < keep {
                                1.0 / keep
                            } else {
                                0.0
                            }
                        })
                        .collect();
                    let a = &self.nodes[inputs[0].0].value;
                    let values = a.values().iter().zip(&mask).map(|(x, m)| x * m).collect();
                    return Ok((Tensor::from_parts(a.shape().to_vec(), values), Some(mask)));
                }
            }
            OpKind::DotRows => {
                let q = b.unwrap();
                let qs = q.shape();
                if a.shape().len() != 2 || qs.is_empty() || qs.len() > 2 || q.last_dim() != a.shape()[1] {
                    return Err(shape_err(a, q));
                }
                let (e, d) = (a.shape()[0], a.shape()[1]);
                let bsz = q.rows();
                let mut values = vec![0.0; bsz * e];
                gemm(q.values(), false, a.values(), true, &mut values, bsz, d, e, 0.0);
                let shape = if qs.len() == 1 { vec![e] } else { vec![bsz, e] };
                Tensor::from_parts(shape, values)
            }
            OpKind::CrossEntropy(targets) => {
                if a.shape().is_empty() || a.shape().len() > 2 || a.rows() != targets.len() {
                    return Err(invalid(
                        op,
                        format!("{} targets for logits {:?}", targets.len(), a.shape()),
                    ));
                }
                let c = a.last_dim();
                if let Some(t) = targets.iter().find(|&&t| t >= c) {
                    return Err(invalid(op, format!("target {t} out of range for {c} classes")));
                }
                let mut probs = a.values().to_vec();
                let mut total = 0.0;
                for (row, &t) in probs.chunks_mut(c).zip(targets) {
                    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
                    total += lse - row[t];
                    softmax_in_place(row);
                }
                return Ok((Tensor::scalar(total), Some(probs)));
            }
            OpKind::Sum => Tensor::scalar(a.values().iter().sum()),
            OpKind::Standardize(eps) => {
                let d = a.last_dim();
                let mut values = a.values().to_vec();
                for row in values.chunks_mut(d) {
                    let mean = row.iter().sum::<f64>() / d as f64;
                    let var = row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / d as f64;
                    let inv = 1.0 / (var + eps).sqrt();
                    row.iter_mut().for_each(|x| *x = (*x - mean) * inv);
                }
                Tensor::from_parts(a.shape().to_vec(), values)
            }
        };
        Ok((out, None))
    }

    /// Reverse sweep from a scalar `loss`. Parameter adjoints are added to
    /// the gradient slots in `store`; parameters the loss does not reach get
    /// zero-filled slots.
    pub fn backward(&self, loss: NodeId, store: &mut ParamStore) -> Result<Gradients, GraphError> {
        let grads = self.gradients(loss)?;
        store.ensure_grads();
        for (node, adj) in self.nodes.iter().zip(&grads.adjoints) {
            if let (Origin::Param(id), Some(adj)) = (&node.origin, adj) {
                let g = store.get_mut(*id).tensor_mut().grad_mut();
                for (acc, x) in g.iter_mut().zip(adj) {
                    *acc += x;
                }
            }
        }
        Ok(grads)
    }

    /// Reverse sweep without touching any parameter store.
    pub fn gradients(&self, loss: NodeId) -> Result<Gradients, GraphError> {
        let root = &self.nodes[loss.0].value;
        if !root.is_scalar() {
            return Err(GraphError::NonScalarLoss(root.shape().to_vec()));
        }
        let mut adjoints: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        adjoints[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            let Origin::Op(kind) = &node.origin else {
                continue;
            };
            if !node.requires_grad {
                continue;
            }
            let Some(g) = adjoints[idx].take() else {
                continue;
            };
            self.propagate(kind, node, &g, &mut adjoints);
            adjoints[idx] = Some(g);
        }
        Ok(Gradients { adjoints })
    }

    fn propagate(&self, kind: &OpKind, node: &Node, g: &[f64], adj: &mut [Option<Vec<f64>>]) {
        let inputs = &node.inputs;
        let val = |i: usize| &self.nodes[inputs[i].0].value;
        let wants = |i: usize| self.nodes[inputs[i].0].requires_grad;
        let y = node.value.values();
        let mut unary = |f: &dyn Fn(usize) -> f64| {
            if wants(0) {
                let acc = slot(adj, inputs[0], val(0).len());
                for (i, a) in acc.iter_mut().enumerate() {
                    *a += g[i] * f(i);
                }
            }
        };
        match kind {
            OpKind::MatMul => {
                let (a, b) = (val(0), val(1));
                let (n, k, m) = (a.shape()[0], a.shape()[1], b.shape()[1]);
                if wants(0) {
                    let acc = slot(adj, inputs[0], n * k);
                    gemm(g, false, b.values(), true, acc, n, m, k, 1.0);
                }
                if wants(1) {
                    let acc = slot(adj, inputs[1], k * m);
                    gemm(a.values(), true, g, false, acc, k, n, m, 1.0);
                }
            }
            OpKind::Add => {
                if wants(0) {
                    add_into(slot(adj, inputs[0], g.len()), g, 1.0);
                }
                if wants(1) {
                    let b_len = val(1).len();
                    let acc = slot(adj, inputs[1], b_len);
                    if b_len == g.len() {
                        add_into(acc, g, 1.0);
                    } else {
                        for row in g.chunks(b_len) {
                            add_into(acc, row, 1.0);
                        }
                    }
                }
            }
            OpKind::Sub => {
                if wants(0) {
                    add_into(slot(adj, inputs[0], g.len()), g, 1.0);
                }
                if wants(1) {
                    add_into(slot(adj, inputs[1], g.len()), g, -1.0);
                }
            }
            OpKind::Mul => {
                let (a, b) = (val(0).values(), val(1).values());
                if wants(0) {
                    let acc = slot(adj, inputs[0], g.len());
                    for i in 0..g.len() {
                        acc[i] += g[i] * b[i];
                    }
                }
                if wants(1) {
                    let acc = slot(adj, inputs[1], g.len());
                    for i in 0..g.len() {
                        acc[i] += g[i] * a[i];
                    }
                }
            }
            OpKind::Scale(c) => unary(&|_| *c),
            OpKind::AddScalar(_) | OpKind::Reshape(_) | OpKind::Flatten => unary(&|_| 1.0),
            OpKind::Cos => {
                let x = val(0).values();
                unary(&|i| -x[i].sin())
            }
            OpKind::Sigmoid => unary(&|i| y[i] * (1.0 - y[i])),
            OpKind::Tanh => unary(&|i| 1.0 - y[i] * y[i]),
            OpKind::Relu => {
                let x = val(0).values();
                unary(&|i| if x[i] > 0.0 { 1.0 } else { 0.0 })
            }
            OpKind::Log => {
                let x = val(0).values();
                unary(&|i| 1.0 / x[i])
            }
            OpKind::Dropout(_) => match &node.cache {
                Some(mask) => unary(&|i| mask[i]),
                None => unary(&|_| 1.0),
            },
            OpKind::Softmax => {
                if wants(0) {
                    let d = node.value.last_dim();
                    let acc = slot(adj, inputs[0], g.len());
                    for ((acc, gr), yr) in acc.chunks_mut(d).zip(g.chunks(d)).zip(y.chunks(d)) {
                        let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                        for j in 0..d {
                            acc[j] += yr[j] * (gr[j] - dot);
                        }
                    }
                }
            }
            OpKind::Concat => {
                let (p, q) = (val(0).last_dim(), val(1).last_dim());
                let rows = val(0).rows();
                if wants(0) {
                    let acc = slot(adj, inputs[0], rows * p);
                    for r in 0..rows {
                        add_into(&mut acc[r * p..(r + 1) * p], &g[r * (p + q)..r * (p + q) + p], 1.0);
                    }
                }
                if wants(1) {
                    let acc = slot(adj, inputs[1], rows * q);
                    for r in 0..rows {
                        add_into(
                            &mut acc[r * q..(r + 1) * q],
                            &g[r * (p + q) + p..(r + 1) * (p + q)],
                            1.0,
                        );
                    }
                }
            }
            OpKind::MeanRows => {
                if wants(0) {
                    let a = val(0);
                    let n = a.shape()[0];
                    let acc = slot(adj, inputs[0], a.len());
                    for row in acc.chunks_mut(g.len()) {
                        add_into(row, g, 1.0 / n as f64);
                    }
                }
            }
            OpKind::Gather(index) => {
                if wants(0) {
                    let a = val(0);
                    let d = a.shape()[1];
                    let acc = slot(adj, inputs[0], a.len());
                    for (r, &i) in index.iter().enumerate() {
                        add_into(&mut acc[i * d..(i + 1) * d], &g[r * d..(r + 1) * d], 1.0);
                    }
                }
            }
            OpKind::ScatterMean { index, groups } => {
                if wants(0) {
                    let a = val(0);
                    let d = a.shape()[1];
                    let counts = group_counts(index, *groups);
                    let acc = slot(adj, inputs[0], a.len());
                    for (r, &grp) in index.iter().enumerate() {
                        add_into(
                            &mut acc[r * d..(r + 1) * d],
                            &g[grp * d..(grp + 1) * d],
                            1.0 / counts[grp],
                        );
                    }
                }
            }
            OpKind::Conv1d => {
                let (x, k) = (val(0), val(1));
                let (xs, ks) = (x.shape(), k.shape());
                let dims = ConvDims {
                    batch: xs[0],
                    height: xs[1],
                    width: xs[2],
                    channels: ks[0],
                    kernel: ks[2],
                };
                if wants(0) {
                    let acc = slot(adj, inputs[0], x.len());
                    conv1d_grad_input(g, k.values(), acc, &dims);
                }
                if wants(1) {
                    let acc = slot(adj, inputs[1], k.len());
                    conv1d_grad_kernel(g, x.values(), acc, &dims);
                }
                if wants(2) {
                    let acc = slot(adj, inputs[2], dims.channels);
                    for (i, gv) in g.iter().enumerate() {
                        acc[(i / dims.width) % dims.channels] += gv;
                    }
                }
            }
            OpKind::DotRows => {
                let (cand, q) = (val(0), val(1));
                let (e, d) = (cand.shape()[0], cand.shape()[1]);
                let bsz = q.rows();
                if wants(0) {
                    let acc = slot(adj, inputs[0], e * d);
                    gemm(g, true, q.values(), false, acc, e, bsz, d, 1.0);
                }
                if wants(1) {
                    let acc = slot(adj, inputs[1], bsz * d);
                    gemm(g, false, cand.values(), false, acc, bsz, e, d, 1.0);
                }
            }
            OpKind::CrossEntropy(targets) => {
                if wants(0) {
                    let probs = node.cache.as_ref().expect("cross-entropy caches probabilities");
                    let c = val(0).last_dim();
                    let acc = slot(adj, inputs[0], probs.len());
                    for (r, &t) in targets.iter().enumerate() {
                        for j in 0..c {
                            let onehot = if j == t { 1.0 } else { 0.0 };
                            acc[r * c + j] += g[0] * (probs[r * c + j] - onehot);
                        }
                    }
                }
            }
            OpKind::Standardize(eps) => {
                if wants(0) {
                    let x = val(0).values();
                    let d = node.value.last_dim();
                    let acc = slot(adj, inputs[0], g.len());
                    for (r, ((acc, gr), yr)) in acc.chunks_mut(d).zip(g.chunks(d)).zip(y.chunks(d)).enumerate() {
                        let xr = &x[r * d..(r + 1) * d];
                        let mean = xr.iter().sum::<f64>() / d as f64;
                        let var = xr.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
                        let inv = 1.0 / (var + eps).sqrt();
                        let g_mean = gr.iter().sum::<f64>() / d as f64;
                        let gy_mean = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                        for j in 0..d {
                            acc[j] += inv * (gr[j] - g_mean - yr[j] * gy_mean);
                        }
                    }
                }
            }
            OpKind::Sum => {
                if wants(0) {
                    let acc = slot(adj, inputs[0], val(0).len());
                    acc.iter_mut().for_each(|a| *a += g[0]);
                }
            }
        }
    }
}

fn slot(adj: &mut [Option<Vec<f64>>], node: NodeId, len: usize) -> &mut [f64] {
    adj[node.0].get_or_insert_with(|| vec![0.0; len])
}

fn add_into(acc: &mut [f64], g: &[f64], scale: f64) {
    for (a, x) in acc.iter_mut().zip(g) {
        *a += x * scale;
    }
}

fn invalid(op: &'static str, detail: String) -> GraphError {
    GraphError::Invalid { op, detail }
}

fn map(a: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::from_parts(a.shape().to_vec(), a.values().iter().map(|&x| f(x)).collect())
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let values = a.values().iter().zip(b.values()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_parts(a.shape().to_vec(), values)
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    row.iter_mut().for_each(|v| *v /= total);
}

fn group_counts(index: &[usize], groups: usize) -> Vec<f64> {
    let mut counts = vec![0.0; groups];
    for &g in index {
        counts[g] += 1.0;
    }
    counts.iter_mut().for_each(|c| *c = f64::max(*c, 1.0));
    counts
}

struct ConvDims {
    batch: usize,
    height: usize,
    width: usize,
    channels: usize,
    kernel: usize,
}

impl ConvDims {
    /// Input column feeding output column `w` through kernel tap `j`.
    fn source(&self, w: usize, j: usize) -> Option<usize> {
        let pad = self.kernel / 2;
        (w + j).checked_sub(pad).filter(|&s| s < self.width)
    }
}

fn conv1d_forward(x: &[f64], k: &[f64], bias: &[f64], d: &ConvDims) -> Vec<f64> {
    let mut out = vec![0.0; d.batch * d.channels * d.width];
    for b in 0..d.batch {
        let xb = &x[b * d.height * d.width..(b + 1) * d.height * d.width];
        for c in 0..d.channels {
            let kc = &k[c * d.height * d.kernel..(c + 1) * d.height * d.kernel];
            let row = &mut out[(b * d.channels + c) * d.width..(b * d.channels + c + 1) * d.width];
            for (w, o) in row.iter_mut().enumerate() {
                let mut acc = bias[c];
                for h in 0..d.height {
                    for j in 0..d.kernel {
                        if let Some(s) = d.source(w, j) {
                            acc += kc[h * d.kernel + j] * xb[h * d.width + s];
                        }
                    }
                }
                *o = acc;
            }
        }
    }
    out
}

fn conv1d_grad_input(g: &[f64], k: &[f64], acc: &mut [f64], d: &ConvDims) {
    for b in 0..d.batch {
        let ab = &mut acc[b * d.height * d.width..(b + 1) * d.height * d.width];
        for c in 0..d.channels {
            let kc = &k[c * d.height * d.kernel..(c + 1) * d.height * d.kernel];
            let gr = &g[(b * d.channels + c) * d.width..(b * d.channels + c + 1) * d.width];
            for (w, gv) in gr.iter().enumerate() {
                for h in 0..d.height {
                    for j in 0..d.kernel {
                        if let Some(s) = d.source(w, j) {
                            ab[h * d.width + s] += gv * kc[h * d.kernel + j];
                        }
                    }
                }
            }
        }
    }
}

fn conv1d_grad_kernel(g: &[f64], x: &[f64], acc: &mut [f64], d: &ConvDims) {
    for b in 0..d.batch {
        let xb = &x[b * d.height * d.width..(b + 1) * d.height * d.width];
        for c in 0..d.channels {
            let ac = &mut acc[c * d.height * d.kernel..(c + 1) * d.height * d.kernel];
            let gr = &g[(b * d.channels + c) * d.width..(b * d.channels + c + 1) * d.width];
            for (w, gv) in gr.iter().enumerate() {
                for h in 0..d.height {
                    for j in 0..d.kernel {
                        if let Some(s) = d.source(w, j) {
                            ac[h * d.kernel + j] += gv * xb[h * d.width + s];
                        }
                    }
                }
            }
        }
    }
}

/// Shorthand builders; each one is `apply` with a fixed kind.
impl Graph {
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        self.apply(OpKind::MatMul, &[a, b])
    }
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        self.apply(OpKind::Add, &[a, b])
    }
    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        self.apply(OpKind::Sub, &[a, b])
    }
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        self.apply(OpKind::Mul, &[a, b])
    }
    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId, GraphError> {
        self.apply(OpKind::Scale(c), &[a])
    }
    pub fn add_scalar(&mut self, a: NodeId, c: f64) -> Result<NodeId, GraphError> {
        self.apply(OpKind::AddScalar(c), &[a])
    }
    pub fn concat(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        self.apply(OpKind::Concat, &[a, b])
    }
    pub fn mean_rows(&mut self, a: NodeId) -> Result<NodeId, GraphError> {
        self.apply(OpKind::MeanRows, &[a])
    }
    pub fn cos(&mut self, a: NodeId) -> Result<NodeId, GraphError> {
        self.apply(OpKind::Cos, &[a])
    }
    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId, GraphError> {
        self.apply(OpKind::Sigmoid, &[a])
    }
    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId, GraphError> {
        self.apply(OpKind::Tanh, &[a])
    }
    pub fn relu(&mut self, a: NodeId) -> Result<NodeId, GraphError> {
        self.apply(OpKind::Relu, &[a])
    }
    pub fn softmax(&mut self, a: NodeId) -> Result<NodeId, GraphError> {
        self.apply(OpKind::Softmax, &[a])
    }
    pub fn log(&mut self, a: NodeId) -> Result<NodeId, GraphError> {
        self.apply(OpKind::Log, &[a])
    }
    pub fn gather(&mut self, table: NodeId, index: Vec<usize>) -> Result<NodeId, GraphError> {
        self.apply(OpKind::Gather(index), &[table])
    }
    pub fn scatter_mean(
        &mut self,
        rows: NodeId,
        index: Vec<usize>,
        groups: usize,
    ) -> Result<NodeId, GraphError> {
        self.apply(OpKind::ScatterMean { index, groups }, &[rows])
    }
    pub fn conv1d(&mut self, x: NodeId, kernel: NodeId, bias: NodeId) -> Result<NodeId, GraphError> {
        self.apply(OpKind::Conv1d, &[x, kernel, bias])
    }
    pub fn reshape(&mut self, a: NodeId, shape: Vec<usize>) -> Result<NodeId, GraphError> {
        self.apply(OpKind::Reshape(shape), &[a])
    }
    pub fn flatten(&mut self, a: NodeId) -> Result<NodeId, GraphError> {
        self.apply(OpKind::Flatten, &[a])
    }
    pub fn dropout(&mut self, a: NodeId, rate: f64) -> Result<NodeId, GraphError> {
        self.apply(OpKind::Dropout(rate), &[a])
    }
    pub fn dot_rows(&mut self, candidates: NodeId, queries: NodeId) -> Result<NodeId, GraphError> {
        self.apply(OpKind::DotRows, &[candidates, queries])
    }
    pub fn cross_entropy(&mut self, logits: NodeId, targets: Vec<usize>) -> Result<NodeId, GraphError> {
        self.apply(OpKind::CrossEntropy(targets), &[logits])
    }
    pub fn sum(&mut self, a: NodeId) -> Result<NodeId, GraphError> {
        self.apply(OpKind::Sum, &[a])
    }
    pub fn standardize(&mut self, a: NodeId, eps: f64) -> Result<NodeId, GraphError> {
        self.apply(OpKind::Standardize(eps), &[a])
    }
}
