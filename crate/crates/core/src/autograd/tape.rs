use std::collections::HashMap;
use std::ops::Range;
use std::sync::Arc;

use super::kernels::{self, broadcast_shape, broadcast_strides, for_each_broadcast};
use super::tensor::{numel, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UnaryOp {
    Negate,
    Tanh,
    Sigmoid,
    Log,
    Sqrt,
    /// `ln σ(x)`, evaluated as `−softplus(−x)`.
    LogSigmoid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Unary(UnaryOp, Var),
    Binary(BinaryOp, Var, Var),
    Scale(Var, f32),
    MatMul(Var, Var),
    Sum { input: Var, axis: Option<usize> },
    Mean { input: Var, axis: Option<usize> },
    Reshape(Var),
    Slice { input: Var, axis: usize, start: usize },
    Concat { inputs: Vec<Var>, axis: usize },
    Permute { input: Var, perm: Vec<usize> },
    Gather { table: Var, indices: Vec<usize> },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Unary(..) => "unary",
            Op::Binary(..) => "binary",
            Op::Scale(..) => "scale",
            Op::MatMul(..) => "matmul",
            Op::Sum { .. } => "sum",
            Op::Mean { .. } => "mean",
            Op::Reshape(_) => "reshape",
            Op::Slice { .. } => "slice",
            Op::Concat { .. } => "concat",
            Op::Permute { .. } => "permute",
            Op::Gather { .. } => "gather",
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    /// Accumulated gradient; only kept for leaves.
    grad: Option<Vec<f32>>,
}

/// Define-by-run reverse-mode tape.
///
/// Every operation appends a node; [`Tape::backward`] walks the nodes in
/// reverse recording order. Leaf gradients accumulate across repeated
/// `backward` calls until [`Tape::zero_grad`].
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    leaves: HashMap<usize, Var>,
    check_finite: bool,
}

fn add_into(slot: &mut Option<Vec<f32>>, delta: Vec<f32>) {
    match slot {
        Some(g) => g.iter_mut().zip(&delta).for_each(|(g, d)| *g += d),
        None => *slot = Some(delta),
    }
}

/// Pairs of (a, b) matrix indices for each output batch entry.
fn batch_pairs(a_batch: &[usize], b_batch: &[usize], out_batch: &[usize]) -> Vec<(usize, usize)> {
    let sa = broadcast_strides(a_batch, out_batch);
    let sb = broadcast_strides(b_batch, out_batch);
    let mut pairs = Vec::with_capacity(numel(out_batch));
    for_each_broadcast(out_batch, &sa, &sb, |_, ia, ib| pairs.push((ia, ib)));
    pairs
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Tape that rejects any op producing NaN or infinity.
    pub fn with_finite_check() -> Self {
        Tape {
            check_finite: true,
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Result<Var> {
        if self.check_finite && !value.all_finite() {
            return Err(Error::NonFinite(op.name().to_string()));
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Registers a tensor as a leaf. The buffer is shared, not copied, and
    /// registering the same tensor again returns the same handle.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        let key = Arc::as_ptr(t.data_arc()) as usize;
        if let Some(&v) = self.leaves.get(&key) {
            if self.nodes[v.0].value.shape() == t.shape() {
                return v;
            }
        }
        let v = Var(self.nodes.len());
        self.nodes.push(Node {
            value: t.detach(),
            op: Op::Leaf,
            requires_grad: t.requires_grad(),
            grad: None,
        });
        self.leaves.insert(key, v);
        v
    }

    /// Records a value that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        let v = Var(self.nodes.len());
        self.nodes.push(Node {
            value: t.detach(),
            op: Op::Leaf,
            requires_grad: false,
            grad: None,
        });
        v
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.node(v).value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.node(v).value.shape()
    }

    /// Accumulated gradient of a leaf after [`Tape::backward`].
    pub fn grad(&self, v: Var) -> Option<&[f32]> {
        self.node(v).grad.as_deref()
    }

    /// Gradient for a tensor previously registered with [`Tape::leaf`].
    pub fn grad_of(&self, t: &Tensor) -> Option<&[f32]> {
        let key = Arc::as_ptr(t.data_arc()) as usize;
        self.leaves.get(&key).and_then(|&v| self.grad(v))
    }

    /// Adds the tape's leaf gradients into the matching tensors' grad buffers.
    pub fn write_grads<'a>(&self, params: impl IntoIterator<Item = &'a mut Tensor>) -> Result<()> {
        for p in params {
            if let Some(g) = self.grad_of(p) {
                p.accumulate_grad(g)?;
            }
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    // ---- elementwise ----

    pub fn unary(&mut self, op: UnaryOp, x: Var) -> Result<Var> {
        let input = self.value(x);
        let data = input.data();
        let out: Vec<f32> = match op {
            UnaryOp::Negate => data.iter().map(|v| -v).collect(),
            UnaryOp::Tanh => data.iter().map(|v| v.tanh()).collect(),
            UnaryOp::Sigmoid => data.iter().map(|&v| kernels::sigmoid(v)).collect(),
            UnaryOp::LogSigmoid => data.iter().map(|&v| kernels::log_sigmoid(v)).collect(),
            UnaryOp::Log => {
                if let Some(bad) = data.iter().find(|&&v| v <= 0.0 || v.is_nan()) {
                    return Err(Error::Domain {
                        op: "log",
                        detail: format!("non-positive input {bad}"),
                    });
                }
                data.iter().map(|v| v.ln()).collect()
            }
            UnaryOp::Sqrt => {
                if let Some(bad) = data.iter().find(|&&v| v < 0.0 || v.is_nan()) {
                    return Err(Error::Domain {
                        op: "sqrt",
                        detail: format!("negative input {bad}"),
                    });
                }
                data.iter().map(|v| v.sqrt()).collect()
            }
        };
        let shape = input.shape().to_vec();
        let rg = self.rg(x);
        self.push(Tensor::new(shape, out)?, Op::Unary(op, x), rg)
    }

    pub fn neg(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryOp::Negate, x)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryOp::Tanh, x)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryOp::Sigmoid, x)
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryOp::Log, x)
    }

    pub fn sqrt(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryOp::Sqrt, x)
    }

    pub fn log_sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryOp::LogSigmoid, x)
    }

    pub fn binary(&mut self, op: BinaryOp, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let out_shape = broadcast_shape(ta.shape(), tb.shape())
            .ok_or_else(|| Error::shape("broadcast", ta.shape(), tb.shape()))?;
        let f = match op {
            BinaryOp::Add => |x: f32, y: f32| x + y,
            BinaryOp::Sub => |x: f32, y: f32| x - y,
            BinaryOp::Mul => |x: f32, y: f32| x * y,
        };
        let (da, db) = (ta.data(), tb.data());
        let out = if ta.shape() == tb.shape() {
            da.iter().zip(db).map(|(&x, &y)| f(x, y)).collect()
        } else {
            let sa = broadcast_strides(ta.shape(), &out_shape);
            let sb = broadcast_strides(tb.shape(), &out_shape);
            let mut out = vec![0.0; numel(&out_shape)];
            for_each_broadcast(&out_shape, &sa, &sb, |i, ia, ib| out[i] = f(da[ia], db[ib]));
            out
        };
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::new(out_shape, out)?, Op::Binary(op, a, b), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Mul, a, b)
    }

    pub fn scale(&mut self, x: Var, factor: f32) -> Result<Var> {
        let t = self.value(x);
        let out = t.data().iter().map(|v| v * factor).collect();
        let shape = t.shape().to_vec();
        let rg = self.rg(x);
        self.push(Tensor::new(shape, out)?, Op::Scale(x, factor), rg)
    }

    // ---- linear algebra ----

    /// Batched matrix product `[.., m, k] × [.., k, n] → [.., m, n]` with
    /// broadcast leading dimensions.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (sa, sb) = (ta.shape(), tb.shape());
        if sa.len() < 2 || sb.len() < 2 || sa[sa.len() - 1] != sb[sb.len() - 2] {
            return Err(Error::shape("matmul", sa, sb));
        }
        let (m, k, n) = (sa[sa.len() - 2], sa[sa.len() - 1], sb[sb.len() - 1]);
        let (ba, bb) = (&sa[..sa.len() - 2], &sb[..sb.len() - 2]);
        let batch = broadcast_shape(ba, bb).ok_or_else(|| Error::shape("matmul", sa, sb))?;
        let pairs = batch_pairs(ba, bb, &batch);
        let mut out = vec![0.0; pairs.len() * m * n];
        for (o, &(ia, ib)) in pairs.iter().enumerate() {
            kernels::gemm(
                &ta.data()[ia * m * k..(ia + 1) * m * k],
                &tb.data()[ib * k * n..(ib + 1) * k * n],
                &mut out[o * m * n..(o + 1) * m * n],
                m,
                k,
                n,
            );
        }
        let mut shape = batch;
        shape.extend([m, n]);
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::new(shape, out)?, Op::MatMul(a, b), rg)
    }

    // ---- reductions ----

    fn reduce(&mut self, x: Var, axis: Option<usize>, mean: bool) -> Result<Var> {
        let t = self.value(x);
        let (shape, out) = match axis {
            None => {
                if t.is_empty() {
                    return Err(Error::invalid("reduction over an empty tensor"));
                }
                let s: f64 = t.data().iter().map(|&v| v as f64).sum();
                let v = if mean { s / t.len() as f64 } else { s };
                (Vec::new(), vec![v as f32])
            }
            Some(axis) => {
                let shape = t.shape();
                if axis >= shape.len() {
                    return Err(Error::invalid(format!(
                        "axis {axis} out of range for shape {shape:?}"
                    )));
                }
                if shape[axis] == 0 {
                    return Err(Error::invalid(format!(
                        "reduction over empty axis {axis} of shape {shape:?}"
                    )));
                }
                let outer = numel(&shape[..axis]);
                let len = shape[axis];
                let inner = numel(&shape[axis + 1..]);
                let mut acc = vec![0f64; outer * inner];
                let d = t.data();
                for o in 0..outer {
                    for k in 0..len {
                        let base = (o * len + k) * inner;
                        for j in 0..inner {
                            acc[o * inner + j] += d[base + j] as f64;
                        }
                    }
                }
                let div = if mean { len as f64 } else { 1.0 };
                let mut s = shape.to_vec();
                s.remove(axis);
                (s, acc.into_iter().map(|v| (v / div) as f32).collect())
            }
        };
        let rg = self.rg(x);
        let op = if mean {
            Op::Mean { input: x, axis }
        } else {
            Op::Sum { input: x, axis }
        };
        self.push(Tensor::new(shape, out)?, op, rg)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.reduce(x, None, false)
    }

    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.reduce(x, Some(axis), false)
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        self.reduce(x, None, true)
    }

    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.reduce(x, Some(axis), true)
    }

    // ---- shape manipulation ----

    pub fn reshape(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let value = self.value(x).reshape(shape)?;
        let rg = self.rg(x);
        self.push(value, Op::Reshape(x), rg)
    }

    /// Copies `range` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, range: Range<usize>) -> Result<Var> {
        let t = self.value(x);
        let shape = t.shape();
        if axis >= shape.len() || range.start > range.end || range.end > shape[axis] {
            return Err(Error::invalid(format!(
                "slice {range:?} on axis {axis} out of bounds for shape {shape:?}"
            )));
        }
        let outer = numel(&shape[..axis]);
        let len = shape[axis];
        let inner = numel(&shape[axis + 1..]);
        let width = range.len() * inner;
        let mut out = Vec::with_capacity(outer * width);
        for o in 0..outer {
            let start = (o * len + range.start) * inner;
            out.extend_from_slice(&t.data()[start..start + width]);
        }
        let mut s = shape.to_vec();
        s[axis] = range.len();
        let rg = self.rg(x);
        self.push(
            Tensor::new(s, out)?,
            Op::Slice {
                input: x,
                axis,
                start: range.start,
            },
            rg,
        )
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs
            .first()
            .ok_or_else(|| Error::invalid("concat of zero tensors"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::invalid(format!(
                "concat axis {axis} out of range for shape {base:?}"
            )));
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::shape("concat", &base, s));
            }
            total += s[axis];
        }
        let outer = numel(&base[..axis]);
        let inner = numel(&base[axis + 1..]);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let t = self.value(v);
                let w = t.shape()[axis] * inner;
                out.extend_from_slice(&t.data()[o * w..(o + 1) * w]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let rg = inputs.iter().any(|&v| self.rg(v));
        self.push(
            Tensor::new(shape, out)?,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            rg,
        )
    }

    /// Stacks equally shaped values along a new leading axis.
    pub fn stack(&mut self, inputs: &[Var]) -> Result<Var> {
        let mut expanded = Vec::with_capacity(inputs.len());
        for &v in inputs {
            let mut s = vec![1];
            s.extend_from_slice(self.shape(v));
            expanded.push(self.reshape(v, s)?);
        }
        self.concat(&expanded, 0)
    }

    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let t = self.value(x);
        let rank = t.rank();
        let mut seen = vec![false; rank];
        if perm.len() != rank || perm.iter().any(|&p| p >= rank || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::invalid(format!(
                "{perm:?} is not a permutation of {rank} axes"
            )));
        }
        let (shape, out) = kernels::permute(t.data(), t.shape(), perm);
        let rg = self.rg(x);
        self.push(
            Tensor::new(shape, out)?,
            Op::Permute {
                input: x,
                perm: perm.to_vec(),
            },
            rg,
        )
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let rank = self.value(x).rank();
        if rank < 2 {
            return Err(Error::invalid("transpose needs at least two axes"));
        }
        let mut perm: Vec<usize> = (0..rank).collect();
        perm.swap(rank - 2, rank - 1);
        self.permute(x, &perm)
    }

    /// Selects rows of `table` along axis 0. Gradients scatter-add back.
    pub fn gather_rows(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let t = self.value(table);
        let shape = t.shape();
        if shape.is_empty() {
            return Err(Error::invalid("gather_rows on a scalar"));
        }
        let rows = shape[0];
        let width = numel(&shape[1..]);
        let mut out = Vec::with_capacity(indices.len() * width);
        for &i in indices {
            if i >= rows {
                return Err(Error::invalid(format!(
                    "row index {i} out of range for {rows} rows"
                )));
            }
            out.extend_from_slice(&t.data()[i * width..(i + 1) * width]);
        }
        let mut s = vec![indices.len()];
        s.extend_from_slice(&shape[1..]);
        let rg = self.rg(table);
        self.push(
            Tensor::new(s, out)?,
            Op::Gather {
                table,
                indices: indices.to_vec(),
            },
            rg,
        )
    }

    // ---- backward ----

    /// Back-propagates from a one-element `loss`, accumulating into leaf
    /// gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if loss.0 >= self.nodes.len() {
            return Err(Error::invalid("loss is not on this tape"));
        }
        if self.value(loss).len() != 1 {
            return Err(Error::invalid(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f32>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            if !self.nodes[id].requires_grad {
                continue;
            }
            if let Op::Leaf = self.nodes[id].op {
                add_into(&mut self.nodes[id].grad, g);
                continue;
            }
            self.backward_node(id, &g, &mut grads)?;
        }
        Ok(())
    }

    fn backward_node(&self, id: usize, g: &[f32], grads: &mut [Option<Vec<f32>>]) -> Result<()> {
        let node = &self.nodes[id];
        let out = node.value.data();
        let mut send = |v: Var, delta: Vec<f32>| {
            if self.rg(v) {
                add_into(&mut grads[v.0], delta);
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Unary(op, x) => {
                let xin = self.value(*x).data();
                let d: Vec<f32> = match op {
                    UnaryOp::Negate => g.iter().map(|v| -v).collect(),
                    UnaryOp::Tanh => g.iter().zip(out).map(|(g, y)| g * (1.0 - y * y)).collect(),
                    UnaryOp::Sigmoid => g.iter().zip(out).map(|(g, y)| g * y * (1.0 - y)).collect(),
                    UnaryOp::Log => g.iter().zip(xin).map(|(g, x)| g / x).collect(),
                    UnaryOp::Sqrt => g.iter().zip(out).map(|(g, y)| g * 0.5 / y).collect(),
                    UnaryOp::LogSigmoid => g
                        .iter()
                        .zip(xin)
                        .map(|(g, &x)| g * kernels::sigmoid(-x))
                        .collect(),
                };
                send(*x, d);
            }
            Op::Binary(op, a, b) => {
                let out_shape = node.value.shape();
                let (ta, tb) = (self.value(*a), self.value(*b));
                match op {
                    BinaryOp::Add => {
                        send(*a, kernels::reduce_to_shape(g, out_shape, ta.shape()));
                        send(*b, kernels::reduce_to_shape(g, out_shape, tb.shape()));
                    }
                    BinaryOp::Sub => {
                        send(*a, kernels::reduce_to_shape(g, out_shape, ta.shape()));
                        let neg: Vec<f32> = g.iter().map(|v| -v).collect();
                        send(*b, kernels::reduce_to_shape(&neg, out_shape, tb.shape()));
                    }
                    BinaryOp::Mul => {
                        let sa = broadcast_strides(ta.shape(), out_shape);
                        let sb = broadcast_strides(tb.shape(), out_shape);
                        let (da, db) = (ta.data(), tb.data());
                        let need_a = self.rg(*a);
                        let need_b = self.rg(*b);
                        let mut ga = vec![0f64; if need_a { da.len() } else { 0 }];
                        let mut gb = vec![0f64; if need_b { db.len() } else { 0 }];
                        for_each_broadcast(out_shape, &sa, &sb, |i, ia, ib| {
                            if need_a {
                                ga[ia] += (g[i] * db[ib]) as f64;
                            }
                            if need_b {
                                gb[ib] += (g[i] * da[ia]) as f64;
                            }
                        });
                        if need_a {
                            send(*a, ga.into_iter().map(|v| v as f32).collect());
                        }
                        if need_b {
                            send(*b, gb.into_iter().map(|v| v as f32).collect());
                        }
                    }
                }
            }
            Op::Scale(x, factor) => send(*x, g.iter().map(|v| v * factor).collect()),
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (sa, sb) = (ta.shape(), tb.shape());
                let (m, k, n) = (sa[sa.len() - 2], sa[sa.len() - 1], sb[sb.len() - 1]);
                let (ba, bb) = (&sa[..sa.len() - 2], &sb[..sb.len() - 2]);
                let batch = &node.value.shape()[..node.value.rank() - 2];
                let pairs = batch_pairs(ba, bb, batch);
                let (need_a, need_b) = (self.rg(*a), self.rg(*b));
                let mut ga = vec![0.0f32; if need_a { ta.len() } else { 0 }];
                let mut gb = vec![0.0f32; if need_b { tb.len() } else { 0 }];
                for (o, &(ia, ib)) in pairs.iter().enumerate() {
                    let go = &g[o * m * n..(o + 1) * m * n];
                    let am = &ta.data()[ia * m * k..(ia + 1) * m * k];
                    let bm = &tb.data()[ib * k * n..(ib + 1) * k * n];
                    if need_a {
                        kernels::gemm_nt_acc(go, bm, &mut ga[ia * m * k..(ia + 1) * m * k], m, n, k);
                    }
                    if need_b {
                        kernels::gemm_tn_acc(am, go, &mut gb[ib * k * n..(ib + 1) * k * n], m, k, n);
                    }
                }
                if need_a {
                    send(*a, ga);
                }
                if need_b {
                    send(*b, gb);
                }
            }
            Op::Sum { input, axis } | Op::Mean { input, axis } => {
                let is_mean = matches!(node.op, Op::Mean { .. });
                let in_shape = self.shape(*input);
                let d = match axis {
                    None => {
                        let scale = if is_mean { 1.0 / numel(in_shape) as f32 } else { 1.0 };
                        vec![g[0] * scale; numel(in_shape)]
                    }
                    Some(axis) => {
                        let outer = numel(&in_shape[..*axis]);
                        let len = in_shape[*axis];
                        let inner = numel(&in_shape[axis + 1..]);
                        let scale = if is_mean { 1.0 / len as f32 } else { 1.0 };
                        let mut d = vec![0.0; outer * len * inner];
                        for o in 0..outer {
                            for k in 0..len {
                                let base = (o * len + k) * inner;
                                for j in 0..inner {
                                    d[base + j] = g[o * inner + j] * scale;
                                }
                            }
                        }
                        d
                    }
                };
                send(*input, d);
            }
            Op::Reshape(x) => send(*x, g.to_vec()),
            Op::Slice { input, axis, start } => {
                let in_shape = self.shape(*input);
                let outer = numel(&in_shape[..*axis]);
                let len = in_shape[*axis];
                let inner = numel(&in_shape[axis + 1..]);
                let width = node.value.shape()[*axis] * inner;
                let mut d = vec![0.0; numel(in_shape)];
                for o in 0..outer {
                    let dst = (o * len + start) * inner;
                    d[dst..dst + width].copy_from_slice(&g[o * width..(o + 1) * width]);
                }
                send(*input, d);
            }
            Op::Concat { inputs, axis } => {
                let out_shape = node.value.shape();
                let outer = numel(&out_shape[..*axis]);
                let inner = numel(&out_shape[axis + 1..]);
                let total = out_shape[*axis] * inner;
                let mut offset = 0;
                for &v in inputs {
                    let w = self.shape(v)[*axis] * inner;
                    if self.rg(v) {
                        let mut d = Vec::with_capacity(outer * w);
                        for o in 0..outer {
                            let s = o * total + offset;
                            d.extend_from_slice(&g[s..s + w]);
                        }
                        send(v, d);
                    }
                    offset += w;
                }
            }
            Op::Permute { input, perm } => {
                let inv = kernels::inverse_permutation(perm);
                let (_, d) = kernels::permute(g, node.value.shape(), &inv);
                send(*input, d);
            }
            Op::Gather { table, indices } => {
                let t = self.value(*table);
                let width = numel(&t.shape()[1..]);
                let mut d = vec![0f64; t.len()];
                for (r, &i) in indices.iter().enumerate() {
                    for j in 0..width {
                        d[i * width + j] += g[r * width + j] as f64;
                    }
                }
                send(*table, d.into_iter().map(|v| v as f32).collect());
            }
        }
        Ok(())
    }
}
