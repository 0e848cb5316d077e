//! Reverse-mode automatic differentiation over a recorded tape.
//!
//! A [`Var`] pairs a forward value with an optional node on a [`Tape`].
//! Operations on vars compute the forward value immediately and, when any
//! operand is tracked, append a node holding whatever the adjoint needs.
//! Untracked operands (constants) cost nothing beyond their value.
//!
//! ```
//! use bistream_core::autograd::Tape;
//! use bistream_core::tensor::{DType, Tensor};
//!
//! let tape = Tape::new();
//! let x = tape.param(Tensor::new(&[2], vec![1.0, 2.0], DType::F64).unwrap());
//! let loss = x.square().sum();
//! let grads = tape.backward(&loss).unwrap();
//! assert_eq!(grads.get(&x).unwrap().data(), &[2.0, 4.0]);
//! ```

use std::cell::RefCell;
use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::tensor::kernels;
use crate::tensor::{check_same_dtype, DType, Tensor};

pub type NodeId = usize;

/// Primitive operations with registered adjoints.
#[derive(Debug, Clone, PartialEq)]
pub enum OpKind {
    Leaf,
    Conv2d {
        stride: usize,
        pad: usize,
    },
    Relu,
    SoftmaxRows,
    Matmul,
    BilinearResample {
        out_h: usize,
        out_w: usize,
    },
    Concat {
        axis: usize,
    },
    Add,
    Sub,
    Mul,
    ScalarMul(f64),
    ScalarAdd(f64),
    Mean,
    Sum,
    Abs,
    Square,
    Sqrt,
    Clamp {
        lo: f64,
        hi: f64,
    },
    Reshape,
    Narrow {
        axis: usize,
        start: usize,
        len: usize,
    },
    FlowWarp,
    /// Elementwise function with its derivative saved at forward time.
    Pointwise(&'static str),
}

#[derive(Debug)]
struct Node {
    op: OpKind,
    inputs: Vec<Option<NodeId>>,
    in_shapes: Vec<Vec<usize>>,
    saved: Vec<Tensor>,
}

/// Ordered record of executed ops. Inputs always precede the ops using them.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

#[derive(Clone)]
pub struct Var<'t> {
    tape: &'t Tape,
    value: Tensor,
    node: Option<NodeId>,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("node", &self.node)
            .field("value", &self.value)
            .finish()
    }
}

/// Gradients of tracked leaves, keyed by node id.
#[derive(Debug, Default)]
pub struct Gradients {
    grads: HashMap<NodeId, Tensor>,
}

impl Gradients {
    pub fn get(&self, var: &Var<'_>) -> Option<&Tensor> {
        var.node.and_then(|id| self.grads.get(&id))
    }

    pub fn by_id(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(&id)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// A tracked leaf; its gradient is reported by [`Tape::backward`].
    pub fn param(&self, value: Tensor) -> Var<'_> {
        let id = self.push(Node {
            op: OpKind::Leaf,
            inputs: vec![],
            in_shapes: vec![],
            saved: vec![],
        });
        Var {
            tape: self,
            value,
            node: Some(id),
        }
    }

    /// An untracked value.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        Var {
            tape: self,
            value,
            node: None,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The recorded ops in execution order.
    pub fn ops(&self) -> Vec<OpKind> {
        self.nodes.borrow().iter().map(|n| n.op.clone()).collect()
    }

    /// Input node ids of a recorded op.
    pub fn inputs_of(&self, id: NodeId) -> Vec<Option<NodeId>> {
        self.nodes.borrow()[id].inputs.clone()
    }

    fn push(&self, node: Node) -> NodeId {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        nodes.len() - 1
    }

    fn record<'t>(&'t self, op: OpKind, operands: &[&Var<'t>], saved: Vec<Tensor>, value: Tensor) -> Var<'t> {
        let tracked = operands.iter().any(|v| v.node.is_some());
        let node = tracked.then(|| {
            self.push(Node {
                op,
                inputs: operands.iter().map(|v| v.node).collect(),
                in_shapes: operands.iter().map(|v| v.value.shape().to_vec()).collect(),
                saved,
            })
        });
        Var {
            tape: self,
            value,
            node,
        }
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: &Var<'_>) -> Result<Gradients> {
        if loss.value.numel() != 1 {
            return Err(Error::NonScalarLoss(loss.value.shape().to_vec()));
        }
        if !std::ptr::eq(loss.tape, self) {
            return Err(Error::invalid("loss was recorded on a different tape"));
        }
        let Some(root) = loss.node else {
            return Err(Error::invalid("loss does not depend on any tracked value"));
        };
        let nodes = self.nodes.borrow();
        let mut pending: Vec<Option<Tensor>> = vec![None; root + 1];
        pending[root] = Some(Tensor::full(loss.value.shape(), 1.0, loss.value.dtype()));
        let mut out = Gradients::default();
        for id in (0..=root).rev() {
            let Some(grad) = pending[id].take() else { continue };
            let node = &nodes[id];
            if node.op == OpKind::Leaf {
                out.grads.insert(id, grad);
                continue;
            }
            let input_grads = adjoint(node, &grad)?;
            for (input, g) in node.inputs.iter().zip(input_grads) {
                let (Some(input), Some(g)) = (input, g) else { continue };
                pending[*input] = Some(match pending[*input].take() {
                    Some(acc) => kernels::add(&acc, &g)?,
                    None => g,
                });
            }
        }
        Ok(out)
    }
}

/// Per-input gradients of one node given the gradient of its output.
fn adjoint(node: &Node, grad: &Tensor) -> Result<Vec<Option<Tensor>>> {
    let wants = |i: usize| node.inputs[i].is_some();
    let s = &node.saved;
    let g = match &node.op {
        OpKind::Leaf => vec![],
        OpKind::Conv2d { stride, pad } => {
            let (x, w) = (&s[0], &s[1]);
            let mut v = vec![
                wants(0)
                    .then(|| kernels::conv2d_backward_input(x.shape(), w, grad, *stride, *pad))
                    .transpose()?,
                wants(1)
                    .then(|| kernels::conv2d_backward_weight(x, w.shape(), grad, *stride, *pad))
                    .transpose()?,
            ];
            if node.inputs.len() == 3 {
                v.push(wants(2).then(|| kernels::conv2d_backward_bias(grad)));
            }
            v
        }
        OpKind::Relu => {
            vec![Some(elementwise(&s[0], grad, |x, g| if x > 0.0 { g } else { 0.0 }))]
        }
        OpKind::SoftmaxRows => vec![Some(kernels::softmax_rows_backward(&s[0], grad)?)],
        OpKind::Matmul => {
            let (da, db) = kernels::matmul_backward(&s[0], &s[1], grad)?;
            vec![wants(0).then_some(da), wants(1).then_some(db)]
        }
        OpKind::BilinearResample { .. } => vec![Some(kernels::bilinear_resample_backward(&node.in_shapes[0], grad)?)],
        OpKind::Concat { axis } => {
            let mut start = 0;
            let mut v = Vec::with_capacity(node.inputs.len());
            for (i, shape) in node.in_shapes.iter().enumerate() {
                let len = shape[*axis];
                v.push(wants(i).then(|| kernels::narrow(grad, *axis, start, len)).transpose()?);
                start += len;
            }
            v
        }
        OpKind::Add => vec![Some(grad.clone()), Some(grad.clone())],
        OpKind::Sub => vec![Some(grad.clone()), Some(grad.map(|g| -g))],
        OpKind::Mul => vec![
            wants(0).then(|| kernels::mul(grad, &s[1])).transpose()?,
            wants(1).then(|| kernels::mul(grad, &s[0])).transpose()?,
        ],
        OpKind::ScalarMul(c) => vec![Some(grad.map(|g| g * c))],
        OpKind::ScalarAdd(_) => vec![Some(grad.clone())],
        OpKind::Sum => vec![Some(Tensor::full(&node.in_shapes[0], grad.item()?, grad.dtype()))],
        OpKind::Mean => {
            let n: usize = node.in_shapes[0].iter().product();
            vec![Some(Tensor::full(
                &node.in_shapes[0],
                grad.item()? / n as f64,
                grad.dtype(),
            ))]
        }
        OpKind::Abs => vec![Some(elementwise(&s[0], grad, |x, g| {
            if x > 0.0 {
                g
            } else if x < 0.0 {
                -g
            } else {
                0.0
            }
        }))],
        OpKind::Square => vec![Some(elementwise(&s[0], grad, |x, g| 2.0 * x * g))],
        // subgradient 0 at the origin
        OpKind::Sqrt => vec![Some(elementwise(&s[0], grad, |y, g| {
            if y > 0.0 {
                g / (2.0 * y)
            } else {
                0.0
            }
        }))],
        OpKind::Clamp { lo, hi } => vec![Some(kernels::clamp_backward(&s[0], grad, *lo, *hi))],
        OpKind::Reshape => vec![Some(grad.reshape(&node.in_shapes[0])?)],
        OpKind::Narrow { axis, start, .. } => {
            vec![Some(kernels::narrow_backward(&node.in_shapes[0], grad, *axis, *start))]
        }
        OpKind::FlowWarp => vec![
            Some(kernels::flow_warp_backward(&node.in_shapes[0], &s[0], grad)?),
            None,
        ],
        OpKind::Pointwise(_) => vec![Some(kernels::mul(&s[0], grad)?)],
    };
    Ok(g)
}

fn elementwise(saved: &Tensor, grad: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = saved.data().iter().zip(grad.data()).map(|(&x, &g)| f(x, g)).collect();
    Tensor::from_parts(saved.shape().to_vec(), data, grad.dtype())
}

impl<'t> Var<'t> {
    pub fn value(&self) -> &Tensor {
        &self.value
    }

    pub fn into_value(self) -> Tensor {
        self.value
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn dtype(&self) -> DType {
        self.value.dtype()
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn node(&self) -> Option<NodeId> {
        self.node
    }

    pub fn requires_grad(&self) -> bool {
        self.node.is_some()
    }

    fn same_tape(&self, other: &Var<'t>) -> Result<()> {
        if other.node.is_some() && !std::ptr::eq(self.tape, other.tape) {
            return Err(Error::invalid("operands recorded on different tapes"));
        }
        Ok(())
    }

    fn unary(&self, op: OpKind, saved: Vec<Tensor>, value: Tensor) -> Var<'t> {
        self.tape.record(op, &[self], saved, value)
    }

    pub fn conv2d(&self, w: &Var<'t>, bias: Option<&Var<'t>>, stride: usize, pad: usize) -> Result<Var<'t>> {
        self.same_tape(w)?;
        let value = kernels::conv2d(&self.value, &w.value, bias.map(|b| &b.value), stride, pad)?;
        let mut operands = vec![self, w];
        if let Some(b) = bias {
            self.same_tape(b)?;
            operands.push(b);
        }
        Ok(self.tape.record(
            OpKind::Conv2d { stride, pad },
            &operands,
            vec![self.value.clone(), w.value.clone()],
            value,
        ))
    }

    pub fn relu(&self) -> Var<'t> {
        let value = kernels::relu(&self.value);
        self.unary(OpKind::Relu, vec![self.value.clone()], value)
    }

    pub fn softmax_rows(&self) -> Result<Var<'t>> {
        let value = kernels::softmax_rows(&self.value)?;
        Ok(self.unary(OpKind::SoftmaxRows, vec![value.clone()], value))
    }

    pub fn matmul(&self, rhs: &Var<'t>) -> Result<Var<'t>> {
        self.same_tape(rhs)?;
        let value = kernels::matmul(&self.value, &rhs.value)?;
        Ok(self.tape.record(
            OpKind::Matmul,
            &[self, rhs],
            vec![self.value.clone(), rhs.value.clone()],
            value,
        ))
    }

    pub fn resample(&self, out_h: usize, out_w: usize) -> Result<Var<'t>> {
        let value = kernels::bilinear_resample(&self.value, out_h, out_w)?;
        Ok(self.unary(OpKind::BilinearResample { out_h, out_w }, vec![], value))
    }

    pub fn concat(parts: &[&Var<'t>], axis: usize) -> Result<Var<'t>> {
        let first = parts.first().ok_or_else(|| Error::invalid("concat of zero tensors"))?;
        for p in parts {
            first.same_tape(p)?;
        }
        let values: Vec<&Tensor> = parts.iter().map(|p| &p.value).collect();
        let value = kernels::concat(&values, axis)?;
        Ok(first.tape.record(OpKind::Concat { axis }, parts, vec![], value))
    }

    fn binary(&self, rhs: &Var<'t>, op: OpKind) -> Result<Var<'t>> {
        self.same_tape(rhs)?;
        let (value, saved) = match op {
            OpKind::Add => (kernels::add(&self.value, &rhs.value)?, vec![]),
            OpKind::Sub => (kernels::sub(&self.value, &rhs.value)?, vec![]),
            OpKind::Mul => (
                kernels::mul(&self.value, &rhs.value)?,
                vec![self.value.clone(), rhs.value.clone()],
            ),
            _ => unreachable!("not a binary op: {op:?}"),
        };
        Ok(self.tape.record(op, &[self, rhs], saved, value))
    }

    pub fn add(&self, rhs: &Var<'t>) -> Result<Var<'t>> {
        self.binary(rhs, OpKind::Add)
    }

    pub fn sub(&self, rhs: &Var<'t>) -> Result<Var<'t>> {
        self.binary(rhs, OpKind::Sub)
    }

    pub fn mul(&self, rhs: &Var<'t>) -> Result<Var<'t>> {
        self.binary(rhs, OpKind::Mul)
    }

    pub fn scale(&self, c: f64) -> Var<'t> {
        let value = self.value.map(|v| v * c);
        self.unary(OpKind::ScalarMul(c), vec![], value)
    }

    pub fn add_scalar(&self, c: f64) -> Var<'t> {
        let value = self.value.map(|v| v + c);
        self.unary(OpKind::ScalarAdd(c), vec![], value)
    }

    pub fn sum(&self) -> Var<'t> {
        self.unary(OpKind::Sum, vec![], kernels::sum(&self.value))
    }

    pub fn mean(&self) -> Var<'t> {
        self.unary(OpKind::Mean, vec![], kernels::mean(&self.value))
    }

    pub fn abs(&self) -> Var<'t> {
        let value = self.value.map(f64::abs);
        self.unary(OpKind::Abs, vec![self.value.clone()], value)
    }

    pub fn square(&self) -> Var<'t> {
        let value = self.value.map(|v| v * v);
        self.unary(OpKind::Square, vec![self.value.clone()], value)
    }

    pub fn sqrt(&self) -> Result<Var<'t>> {
        if let Some(bad) = self.value.data().iter().find(|&&v| v < 0.0) {
            return Err(Error::invalid(format!("sqrt of negative value {bad}")));
        }
        let value = self.value.map(f64::sqrt);
        Ok(self.unary(OpKind::Sqrt, vec![value.clone()], value))
    }

    /// Elementwise `f` with derivative `df`, both evaluated on the input.
    pub fn pointwise(&self, name: &'static str, f: impl Fn(f64) -> f64, df: impl Fn(f64) -> f64) -> Var<'t> {
        let value = self.value.map(f);
        let deriv = self.value.map(df);
        self.unary(OpKind::Pointwise(name), vec![deriv], value)
    }

    pub fn clamp(&self, lo: f64, hi: f64) -> Var<'t> {
        let value = kernels::clamp(&self.value, lo, hi);
        self.unary(OpKind::Clamp { lo, hi }, vec![self.value.clone()], value)
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'t>> {
        let value = self.value.reshape(shape)?;
        Ok(self.unary(OpKind::Reshape, vec![], value))
    }

    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Var<'t>> {
        let value = kernels::narrow(&self.value, axis, start, len)?;
        Ok(self.unary(OpKind::Narrow { axis, start, len }, vec![], value))
    }

    /// Warp by a constant flow field; also returns the in-frame mask.
    pub fn flow_warp(&self, flow: &Tensor) -> Result<(Var<'t>, Tensor)> {
        check_same_dtype("flow_warp", &self.value, flow)?;
        let (value, mask) = kernels::flow_warp(&self.value, flow)?;
        let flow_var = self.tape.constant(flow.clone());
        let out = self
            .tape
            .record(OpKind::FlowWarp, &[self, &flow_var], vec![flow.clone()], value);
        Ok((out, mask))
    }
}
