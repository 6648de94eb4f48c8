//! Reverse-mode automatic differentiation over dense arrays.
//!
//! A [`Tape`] records every operation in evaluation order together with its
//! forward value. [`Tape::backward`] walks the nodes in reverse and
//! accumulates vector-Jacobian products into per-node adjoints, then folds
//! the adjoints of parameter leaves into a [`Gradients`] map keyed by
//! [`ParamId`].
//!
//! Operations that are awkward to express as a composition of primitives
//! (the stack dynamic programs) implement [`CustomOp`] and supply their own
//! backward rule.

use serde::{Deserialize, Serialize};

use super::array::Array;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Index of a named array in a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

/// Ordered registry of named parameter arrays.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Array>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Array) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Array {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Array {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Array)> {
        self.names
            .iter()
            .zip(&self.values)
            .enumerate()
            .map(|(i, (n, v))| (ParamId(i), n.as_str(), v))
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Array::len).sum()
    }
}

/// Gradient of a scalar root with respect to every registered parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    grads: Vec<Array>,
}

impl Gradients {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Gradients {
            grads: store.values.iter().map(|v| Array::zeros(v.shape())).collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &Array {
        &self.grads[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Array {
        &mut self.grads[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Array> {
        self.grads.iter()
    }

    pub fn accumulate(&mut self, other: &Gradients) {
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, c: f64) {
        for g in &mut self.grads {
            g.scale_assign(c);
        }
    }

    /// Euclidean norm over all parameters.
    pub fn global_norm(&self) -> f64 {
        self.grads
            .iter()
            .flat_map(|g| g.data())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }
}

/// A differentiable operation with a user-supplied backward rule.
///
/// The forward value is computed by the caller and handed to
/// [`Tape::custom`]. Ops that share mutable state across nodes (a dynamic
/// program that grows one timestep per node) return `true` from
/// [`CustomOp::stateful`] so that backward visits them even when no adjoint
/// reached their output.
pub trait CustomOp {
    fn name(&self) -> &'static str;

    fn backward(
        &self,
        inputs: &[&Array],
        output: &Array,
        grad: Option<&Array>,
    ) -> Result<Vec<Option<Array>>>;

    fn stateful(&self) -> bool {
        false
    }

    /// Recompute the forward value from inputs, if the op supports it.
    fn replay(&self, _inputs: &[&Array]) -> Option<Result<Array>> {
        None
    }
}

/// Built-in operation descriptors.
#[derive(Clone, Debug, PartialEq)]
pub enum Op {
    Add,
    Sub,
    Mul,
    Scale(f64),
    AddConst(f64),
    /// `W [m, n]` times `x [n]`.
    MatVec,
    /// `W x + b`.
    Affine,
    MatMul,
    Exp,
    Log,
    Sigmoid,
    Tanh,
    Sum,
    SumAxis(usize),
    Concat,
    Slice { start: usize, len: usize },
    Index(usize),
    /// `x / s` for a scalar node `s`.
    DivScalar,
    Softmax,
    LogSoftmax,
    LogSumExp,
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Scale(_) => "scale",
            Op::AddConst(_) => "add_const",
            Op::MatVec => "matvec",
            Op::Affine => "affine",
            Op::MatMul => "matmul",
            Op::Exp => "exp",
            Op::Log => "log",
            Op::Sigmoid => "sigmoid",
            Op::Tanh => "tanh",
            Op::Sum => "sum",
            Op::SumAxis(_) => "sum_axis",
            Op::Concat => "concat",
            Op::Slice { .. } => "slice",
            Op::Index(_) => "index",
            Op::DivScalar => "div_scalar",
            Op::Softmax => "softmax",
            Op::LogSoftmax => "log_softmax",
            Op::LogSumExp => "logsumexp",
        }
    }
}

enum NodeKind {
    Constant,
    Param(ParamId),
    Builtin(Op),
    Custom(Box<dyn CustomOp>),
}

struct Node {
    kind: NodeKind,
    inputs: Vec<usize>,
    value: Array,
}

/// Per-node adjoints from one backward pass.
pub struct NodeGrads {
    grads: Vec<Option<Array>>,
}

impl NodeGrads {
    pub fn get(&self, v: Var) -> Option<&Array> {
        self.grads[v.0].as_ref()
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

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

    pub fn value(&self, v: Var) -> &Array {
        &self.nodes[v.0].value
    }

    pub fn constant(&mut self, value: Array) -> Var {
        self.push(NodeKind::Constant, Vec::new(), value)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(NodeKind::Param(id), Vec::new(), store.get(id).clone())
    }

    fn push(&mut self, kind: NodeKind, inputs: Vec<usize>, value: Array) -> Var {
        self.nodes.push(Node {
            kind,
            inputs,
            value,
        });
        Var(self.nodes.len() - 1)
    }

    /// Evaluate `op` on `inputs` and record it.
    pub fn apply(&mut self, op: Op, inputs: &[Var]) -> Result<Var> {
        let value = {
            let vals: Vec<&Array> = inputs.iter().map(|v| &self.nodes[v.0].value).collect();
            eval(&op, &vals)?
        };
        Ok(self.push(
            NodeKind::Builtin(op),
            inputs.iter().map(|v| v.0).collect(),
            value,
        ))
    }

    /// Record a custom op whose forward value was computed by the caller.
    pub fn custom(&mut self, op: Box<dyn CustomOp>, inputs: &[Var], output: Array) -> Result<Var> {
        if !output.all_finite() {
            return Err(Error::NonFinite { op: op.name() });
        }
        Ok(self.push(
            NodeKind::Custom(op),
            inputs.iter().map(|v| v.0).collect(),
            output,
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Op::Add, &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Op::Sub, &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Op::Mul, &[a, b])
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.apply(Op::Scale(c), &[a])
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Result<Var> {
        self.apply(Op::AddConst(c), &[a])
    }

    pub fn matvec(&mut self, w: Var, x: Var) -> Result<Var> {
        self.apply(Op::MatVec, &[w, x])
    }

    pub fn affine(&mut self, w: Var, x: Var, b: Var) -> Result<Var> {
        self.apply(Op::Affine, &[w, x, b])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Op::MatMul, &[a, b])
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.apply(Op::Exp, &[a])
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.apply(Op::Log, &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.apply(Op::Sigmoid, &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.apply(Op::Tanh, &[a])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.apply(Op::Sum, &[a])
    }

    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.apply(Op::SumAxis(axis), &[a])
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        self.apply(Op::Concat, parts)
    }

    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        self.apply(Op::Slice { start, len }, &[a])
    }

    pub fn index(&mut self, a: Var, i: usize) -> Result<Var> {
        self.apply(Op::Index(i), &[a])
    }

    pub fn div_scalar(&mut self, a: Var, s: Var) -> Result<Var> {
        self.apply(Op::DivScalar, &[a, s])
    }

    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        self.apply(Op::Softmax, &[a])
    }

    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        self.apply(Op::LogSoftmax, &[a])
    }

    pub fn logsumexp(&mut self, a: Var) -> Result<Var> {
        self.apply(Op::LogSumExp, &[a])
    }

    /// Adjoints of every node with respect to the scalar `root`.
    pub fn backward_nodes(&self, root: Var) -> Result<NodeGrads> {
        let root_val = &self.nodes[root.0].value;
        if !root_val.is_scalar() {
            return Err(Error::NonScalarRoot(root_val.shape().to_vec()));
        }
        let mut grads: Vec<Option<Array>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Array::full(root_val.shape(), 1.0));

        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            let stateful = matches!(&node.kind, NodeKind::Custom(op) if op.stateful());
            if grads[idx].is_none() && !stateful {
                continue;
            }
            let inputs: Vec<&Array> = node.inputs.iter().map(|&i| &self.nodes[i].value).collect();
            let input_grads: Vec<Option<Array>> = match &node.kind {
                NodeKind::Constant | NodeKind::Param(_) => continue,
                NodeKind::Builtin(op) => {
                    let g = grads[idx].as_ref().expect("checked above");
                    vjp(op, &inputs, &node.value, g).into_iter().map(Some).collect()
                }
                NodeKind::Custom(op) => op.backward(&inputs, &node.value, grads[idx].as_ref())?,
            };
            for (&input, g) in node.inputs.iter().zip(input_grads) {
                let Some(g) = g else { continue };
                match &mut grads[input] {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => *slot = Some(g),
                }
            }
        }
        Ok(NodeGrads { grads })
    }

    /// Gradients of the scalar `root` with respect to every parameter in
    /// `store`. Parameters that do not influence `root` get zeros.
    pub fn backward(&self, root: Var, store: &ParamStore) -> Result<Gradients> {
        let node_grads = self.backward_nodes(root)?;
        let mut out = Gradients::zeros_like(store);
        for (node, g) in self.nodes.iter().zip(&node_grads.grads) {
            if let (NodeKind::Param(id), Some(g)) = (&node.kind, g) {
                out.get_mut(*id).add_assign(g);
            }
        }
        Ok(out)
    }

    /// Re-evaluate every replayable node from its recorded inputs and check
    /// that the result is bit-identical to the saved value. Returns the
    /// number of nodes checked.
    pub fn replay(&self) -> Result<usize> {
        let mut checked = 0;
        for (idx, node) in self.nodes.iter().enumerate() {
            let inputs: Vec<&Array> = node.inputs.iter().map(|&i| &self.nodes[i].value).collect();
            let recomputed = match &node.kind {
                NodeKind::Constant | NodeKind::Param(_) => continue,
                NodeKind::Builtin(op) => eval(op, &inputs)?,
                NodeKind::Custom(op) => match op.replay(&inputs) {
                    Some(r) => r?,
                    None => continue,
                },
            };
            let same = recomputed.shape() == node.value.shape()
                && recomputed
                    .data()
                    .iter()
                    .zip(node.value.data())
                    .all(|(a, b)| a.to_bits() == b.to_bits());
            if !same {
                return Err(Error::InvalidArray(format!("replay mismatch at node {idx}")));
            }
            checked += 1;
        }
        Ok(checked)
    }
}

fn same_shape(op: &'static str, a: &Array, b: &Array) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            op,
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    Ok(())
}

fn expect_ndim(op: &'static str, a: &Array, ndim: usize) -> Result<()> {
    if a.ndim() != ndim {
        return Err(Error::InvalidArray(format!(
            "{op}: expected a {ndim}-d array, got shape {:?}",
            a.shape()
        )));
    }
    Ok(())
}

fn zip_map(a: &Array, b: &Array, f: impl Fn(f64, f64) -> f64) -> Array {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Array::new(a.shape().to_vec(), data).expect("same shape")
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softmax_vec(x: &[f64]) -> Vec<f64> {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

fn logsumexp_vec(x: &[f64]) -> f64 {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + x.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

fn matvec_data(w: &Array, x: &[f64]) -> Vec<f64> {
    let (m, n) = (w.shape()[0], w.shape()[1]);
    let wd = w.data();
    (0..m)
        .map(|i| {
            let row = &wd[i * n..(i + 1) * n];
            row.iter().zip(x).map(|(a, b)| a * b).sum()
        })
        .collect()
}

fn check_matvec(op: &'static str, w: &Array, x: &Array) -> Result<()> {
    expect_ndim(op, w, 2)?;
    if x.ndim() != 1 || x.len() != w.shape()[1] {
        return Err(Error::ShapeMismatch {
            op,
            left: w.shape().to_vec(),
            right: x.shape().to_vec(),
        });
    }
    Ok(())
}

/// Forward evaluation shared by recording and replay.
fn eval(op: &Op, inputs: &[&Array]) -> Result<Array> {
    let arity = match op {
        Op::Add | Op::Sub | Op::Mul | Op::MatVec | Op::MatMul | Op::DivScalar => 2,
        Op::Affine => 3,
        Op::Concat => inputs.len(),
        _ => 1,
    };
    if inputs.len() != arity {
        return Err(Error::InvalidArray(format!(
            "{}: expected {arity} inputs, got {}",
            op.name(),
            inputs.len()
        )));
    }
    let out = match op {
        Op::Add => {
            same_shape("add", inputs[0], inputs[1])?;
            zip_map(inputs[0], inputs[1], |a, b| a + b)
        }
        Op::Sub => {
            same_shape("sub", inputs[0], inputs[1])?;
            zip_map(inputs[0], inputs[1], |a, b| a - b)
        }
        Op::Mul => {
            same_shape("mul", inputs[0], inputs[1])?;
            zip_map(inputs[0], inputs[1], |a, b| a * b)
        }
        Op::Scale(c) => inputs[0].map(|v| v * c),
        Op::AddConst(c) => inputs[0].map(|v| v + c),
        Op::MatVec => {
            check_matvec("matvec", inputs[0], inputs[1])?;
            Array::vector(matvec_data(inputs[0], inputs[1].data()))
        }
        Op::Affine => {
            check_matvec("affine", inputs[0], inputs[1])?;
            let b = inputs[2];
            if b.ndim() != 1 || b.len() != inputs[0].shape()[0] {
                return Err(Error::ShapeMismatch {
                    op: "affine",
                    left: inputs[0].shape().to_vec(),
                    right: b.shape().to_vec(),
                });
            }
            let mut y = matvec_data(inputs[0], inputs[1].data());
            for (yi, bi) in y.iter_mut().zip(b.data()) {
                *yi += bi;
            }
            Array::vector(y)
        }
        Op::MatMul => {
            let (a, b) = (inputs[0], inputs[1]);
            expect_ndim("matmul", a, 2)?;
            expect_ndim("matmul", b, 2)?;
            if a.shape()[1] != b.shape()[0] {
                return Err(Error::ShapeMismatch {
                    op: "matmul",
                    left: a.shape().to_vec(),
                    right: b.shape().to_vec(),
                });
            }
            let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
            let mut c = vec![0.0; m * n];
            for i in 0..m {
                for p in 0..k {
                    let av = a.data()[i * k + p];
                    for j in 0..n {
                        c[i * n + j] += av * b.data()[p * n + j];
                    }
                }
            }
            Array::new(vec![m, n], c)?
        }
        Op::Exp => inputs[0].map(f64::exp),
        Op::Log => {
            let y = inputs[0].map(f64::ln);
            if y.data().iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
                return Err(Error::NonFinite { op: "log" });
            }
            return Ok(y);
        }
        Op::Sigmoid => inputs[0].map(sigmoid),
        Op::Tanh => inputs[0].map(f64::tanh),
        Op::Sum => Array::scalar(inputs[0].sum()),
        Op::SumAxis(axis) => sum_axis(inputs[0], *axis)?,
        Op::Concat => {
            let mut data = Vec::new();
            for a in inputs {
                expect_ndim("concat", a, 1)?;
                data.extend_from_slice(a.data());
            }
            Array::vector(data)
        }
        Op::Slice { start, len } => {
            let a = inputs[0];
            expect_ndim("slice", a, 1)?;
            if start + len > a.len() {
                return Err(Error::ShapeMismatch {
                    op: "slice",
                    left: a.shape().to_vec(),
                    right: vec![start + len],
                });
            }
            Array::vector(a.data()[*start..start + len].to_vec())
        }
        Op::Index(i) => {
            let a = inputs[0];
            if *i >= a.len() {
                return Err(Error::ShapeMismatch {
                    op: "index",
                    left: a.shape().to_vec(),
                    right: vec![*i],
                });
            }
            Array::scalar(a.data()[*i])
        }
        Op::DivScalar => {
            let s = inputs[1];
            if !s.is_scalar() {
                return Err(Error::ShapeMismatch {
                    op: "div_scalar",
                    left: inputs[0].shape().to_vec(),
                    right: s.shape().to_vec(),
                });
            }
            let d = s.item();
            inputs[0].map(|v| v / d)
        }
        Op::Softmax => {
            expect_ndim("softmax", inputs[0], 1)?;
            Array::vector(softmax_vec(inputs[0].data()))
        }
        Op::LogSoftmax => {
            expect_ndim("log_softmax", inputs[0], 1)?;
            let lse = logsumexp_vec(inputs[0].data());
            inputs[0].map(|v| v - lse)
        }
        Op::LogSumExp => Array::scalar(logsumexp_vec(inputs[0].data())),
    };
    if !out.all_finite() {
        return Err(Error::NonFinite { op: op.name() });
    }
    Ok(out)
}

fn axis_layout(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn sum_axis(a: &Array, axis: usize) -> Result<Array> {
    if axis >= a.ndim() {
        return Err(Error::InvalidArray(format!(
            "sum_axis: axis {axis} out of range for shape {:?}",
            a.shape()
        )));
    }
    let (outer, n, inner) = axis_layout(a.shape(), axis);
    let mut out = vec![0.0; outer * inner];
    for o in 0..outer {
        for k in 0..n {
            for i in 0..inner {
                out[o * inner + i] += a.data()[(o * n + k) * inner + i];
            }
        }
    }
    let mut shape = a.shape().to_vec();
    shape.remove(axis);
    Array::new(shape, out)
}

/// Vector-Jacobian products for built-in ops.
fn vjp(op: &Op, inputs: &[&Array], out: &Array, g: &Array) -> Vec<Array> {
    match op {
        Op::Add => vec![g.clone(), g.clone()],
        Op::Sub => vec![g.clone(), g.map(|v| -v)],
        Op::Mul => vec![
            zip_map(g, inputs[1], |a, b| a * b),
            zip_map(g, inputs[0], |a, b| a * b),
        ],
        Op::Scale(c) => vec![g.map(|v| v * c)],
        Op::AddConst(_) => vec![g.clone()],
        Op::MatVec | Op::Affine => {
            let (w, x) = (inputs[0], inputs[1]);
            let (m, n) = (w.shape()[0], w.shape()[1]);
            let mut gw = vec![0.0; m * n];
            let mut gx = vec![0.0; n];
            for i in 0..m {
                let gi = g.data()[i];
                if gi == 0.0 {
                    continue;
                }
                let row = &w.data()[i * n..(i + 1) * n];
                let grow = &mut gw[i * n..(i + 1) * n];
                for j in 0..n {
                    grow[j] = gi * x.data()[j];
                    gx[j] += gi * row[j];
                }
            }
            let mut res = vec![
                Array::new(vec![m, n], gw).expect("shape"),
                Array::vector(gx),
            ];
            if matches!(op, Op::Affine) {
                res.push(g.clone());
            }
            res
        }
        Op::MatMul => {
            let (a, b) = (inputs[0], inputs[1]);
            let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
            let mut ga = vec![0.0; m * k];
            let mut gb = vec![0.0; k * n];
            for i in 0..m {
                for p in 0..k {
                    let mut acc = 0.0;
                    let av = a.data()[i * k + p];
                    for j in 0..n {
                        let gij = g.data()[i * n + j];
                        acc += gij * b.data()[p * n + j];
                        gb[p * n + j] += av * gij;
                    }
                    ga[i * k + p] = acc;
                }
            }
            vec![
                Array::new(vec![m, k], ga).expect("shape"),
                Array::new(vec![k, n], gb).expect("shape"),
            ]
        }
        Op::Exp => vec![zip_map(g, out, |a, y| a * y)],
        Op::Log => vec![zip_map(g, inputs[0], |a, x| a / x)],
        Op::Sigmoid => vec![zip_map(g, out, |a, y| a * y * (1.0 - y))],
        Op::Tanh => vec![zip_map(g, out, |a, y| a * (1.0 - y * y))],
        Op::Sum => vec![Array::full(inputs[0].shape(), g.item())],
        Op::SumAxis(axis) => {
            let a = inputs[0];
            let (outer, n, inner) = axis_layout(a.shape(), *axis);
            let mut ga = vec![0.0; a.len()];
            for o in 0..outer {
                for k in 0..n {
                    for i in 0..inner {
                        ga[(o * n + k) * inner + i] = g.data()[o * inner + i];
                    }
                }
            }
            vec![Array::new(a.shape().to_vec(), ga).expect("shape")]
        }
        Op::Concat => {
            let mut offset = 0;
            inputs
                .iter()
                .map(|a| {
                    let part = Array::vector(g.data()[offset..offset + a.len()].to_vec());
                    offset += a.len();
                    part
                })
                .collect()
        }
        Op::Slice { start, len } => {
            let mut ga = Array::zeros(inputs[0].shape());
            ga.data_mut()[*start..start + len].copy_from_slice(g.data());
            vec![ga]
        }
        Op::Index(i) => {
            let mut ga = Array::zeros(inputs[0].shape());
            ga.data_mut()[*i] = g.item();
            vec![ga]
        }
        Op::DivScalar => {
            let s = inputs[1].item();
            let gx = g.map(|v| v / s);
            let gs: f64 = g
                .data()
                .iter()
                .zip(inputs[0].data())
                .map(|(gv, xv)| -gv * xv / (s * s))
                .sum();
            vec![gx, Array::new(inputs[1].shape().to_vec(), vec![gs]).expect("shape")]
        }
        Op::Softmax => {
            let dot: f64 = g.data().iter().zip(out.data()).map(|(a, b)| a * b).sum();
            vec![zip_map(g, out, |a, y| y * (a - dot))]
        }
        Op::LogSoftmax => {
            let total: f64 = g.sum();
            vec![zip_map(g, out, |a, y| a - y.exp() * total)]
        }
        Op::LogSumExp => {
            let p = softmax_vec(inputs[0].data());
            let gv = g.item();
            vec![Array::new(
                inputs[0].shape().to_vec(),
                p.into_iter().map(|v| v * gv).collect(),
            )
            .expect("shape")]
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exp_of_zero_is_one() {
        let mut t = Tape::new();
        let x = t.constant(Array::vector(vec![0.0]));
        let y = t.exp(x).unwrap();
        assert_eq!(t.value(y).data(), &[1.0]);
    }

    #[test]
    fn scalar_matmul() {
        let mut t = Tape::new();
        let a = t.constant(Array::matrix(1, 1, vec![2.0]).unwrap());
        let b = t.constant(Array::matrix(1, 1, vec![3.0]).unwrap());
        let c = t.matmul(a, b).unwrap();
        assert_eq!(t.value(c).data(), &[6.0]);
    }

    #[test]
    fn zero_affine_gives_bias() {
        let mut t = Tape::new();
        let w = t.constant(Array::zeros(&[4, 3]));
        let x = t.constant(Array::vector(vec![1.5, -2.0, 7.0]));
        let b = t.constant(Array::full(&[4], 0.5));
        let y = t.affine(w, x, b).unwrap();
        assert_eq!(t.value(y).data(), &[0.5; 4]);
    }

    #[test]
    fn shape_mismatch_names_both_shapes() {
        let mut t = Tape::new();
        let a = t.constant(Array::zeros(&[2, 3]));
        let b = t.constant(Array::zeros(&[2, 3]));
        let err = t.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
        assert!(matches!(err, Error::ShapeMismatch { .. }));
    }

    #[test]
    fn non_finite_is_rejected() {
        let mut t = Tape::new();
        let a = t.constant(Array::vector(vec![1000.0]));
        assert!(matches!(t.exp(a), Err(Error::NonFinite { op: "exp" })));
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut store = ParamStore::new();
        let id = store.add("x", Array::vector(vec![1.0, 2.0, 3.0]));
        let mut t = Tape::new();
        let x = t.param(&store, id);
        let s = t.sum(x).unwrap();
        let g = t.backward(s, &store).unwrap();
        assert_eq!(g.get(id).data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn sigmoid_times_weight() {
        let mut store = ParamStore::new();
        let w = store.add("w", Array::scalar(1.0));
        let unused = store.add("unused", Array::vector(vec![4.0, 5.0]));
        let mut t = Tape::new();
        let z = t.constant(Array::scalar(0.0));
        let s = t.sigmoid(z).unwrap();
        let wv = t.param(&store, w);
        let root = t.mul(s, wv).unwrap();
        let g = t.backward(root, &store).unwrap();
        assert_eq!(g.get(w).item(), 0.5);
        assert_eq!(g.get(unused).data(), &[0.0, 0.0]);
    }

    #[test]
    fn non_scalar_root_rejected() {
        let store = ParamStore::new();
        let mut t = Tape::new();
        let x = t.constant(Array::vector(vec![1.0, 2.0]));
        assert!(matches!(t.backward(x, &store), Err(Error::NonScalarRoot(_))));
    }

    #[test]
    fn replay_is_bit_identical() {
        let mut t = Tape::new();
        let x = t.constant(Array::vector(vec![0.3, -1.2, 2.5]));
        let w = t.constant(Array::matrix(2, 3, vec![0.1, 0.2, -0.3, 0.4, 0.5, 0.6]).unwrap());
        let b = t.constant(Array::vector(vec![0.01, -0.02]));
        let y = t.affine(w, x, b).unwrap();
        let y = t.tanh(y).unwrap();
        let z = t.log_softmax(y).unwrap();
        let _ = t.logsumexp(z).unwrap();
        assert_eq!(t.replay().unwrap(), 4);
    }

    #[test]
    fn sum_axis_matches_manual() {
        let mut t = Tape::new();
        let a = t
            .constant(Array::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
        let s0 = t.sum_axis(a, 0).unwrap();
        let s1 = t.sum_axis(a, 1).unwrap();
        assert_eq!(t.value(s0).data(), &[5.0, 7.0, 9.0]);
        assert_eq!(t.value(s1).data(), &[6.0, 15.0]);
    }
}
