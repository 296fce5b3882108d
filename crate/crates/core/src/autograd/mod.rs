//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] is an append-only tape. Every operation pushes exactly one node
//! holding its output value and the ids of its inputs, so node ids are already
//! in topological order and [`Graph::backward`] simply walks the tape in
//! reverse creation order.

mod backward;
mod ops;

use std::borrow::Cow;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub(crate) enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddColBias(Var, Var),
    Mul(Var, Var),
    /// Elementwise product with a constant (dropout masks).
    MulConst(Var, Vec<T>),
    Sigmoid(Var),
    Relu(Var),
    Tanh(Var),
    /// Pass-through where the indicator is set, zero elsewhere.
    Valve(Var, Vec<bool>),
    SoftmaxRows(Var),
    Sum(Var),
    SumCols(Var),
    Mean(Vec<Var>),
    Conv1dSame {
        x: Var,
        filters: Var,
        bias: Var,
        window: usize,
    },
    Embed {
        table: Var,
        indices: Vec<usize>,
    },
    CrossEntropy {
        logits: Var,
        label: usize,
        probs: Vec<T>,
    },
    Column(Var, usize),
    StackColumns(Vec<Var>),
    Slice(Var, usize),
    ConcatRows(Vec<Var>),
}

impl<T> Op<T> {
    pub(crate) fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::AddColBias(..) => "add_col_bias",
            Op::Mul(..) => "mul",
            Op::MulConst(..) => "mul_const",
            Op::Sigmoid(..) => "sigmoid",
            Op::Relu(..) => "relu",
            Op::Tanh(..) => "tanh",
            Op::Valve(..) => "valve",
            Op::SoftmaxRows(..) => "softmax_rows",
            Op::Sum(..) => "sum",
            Op::SumCols(..) => "sum_cols",
            Op::Mean(..) => "mean",
            Op::Conv1dSame { .. } => "conv1d_same",
            Op::Embed { .. } => "embed",
            Op::CrossEntropy { .. } => "cross_entropy",
            Op::Column(..) => "column",
            Op::StackColumns(..) => "stack_columns",
            Op::Slice(..) => "slice",
            Op::ConcatRows(..) => "concat_rows",
        }
    }
}

struct Node<'a, T: Scalar> {
    value: Cow<'a, Tensor<T>>,
    op: Op<T>,
    requires_grad: bool,
}

/// The recorded computation for one forward pass.
///
/// Leaves may borrow their values (`'a`) so binding model parameters does not
/// copy them.
pub struct Graph<'a, T: Scalar = f32> {
    nodes: Vec<Node<'a, T>>,
    grads: Vec<Option<Vec<T>>>,
    fault: Option<&'static str>,
}

impl<'a, T: Scalar> Default for Graph<'a, T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a, T: Scalar> Graph<'a, T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            grads: Vec::new(),
            fault: None,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Constant input; receives no gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push_leaf(Cow::Owned(value), false)
    }

    /// Gradient-bearing input that owns its value.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push_leaf(Cow::Owned(value), true)
    }

    /// Leaf borrowing an existing tensor.
    pub fn bind(&mut self, value: &'a Tensor<T>, requires_grad: bool) -> Var {
        self.push_leaf(Cow::Borrowed(value), requires_grad)
    }

    fn push_leaf(&mut self, value: Cow<'a, Tensor<T>>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub(crate) fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last [`backward`](Self::backward) loss with respect
    /// to `v`; `None` for nodes that do not require gradients.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Vec<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }

    /// Populates gradients of the scalar `loss` for every gradient-bearing
    /// node that precedes it on the tape.
    ///
    /// Leaves that require gradients but are unreachable from `loss` receive
    /// zero gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        self.grads = vec![None; self.nodes.len()];
        self.grads[loss.0] = Some(vec![T::one()]);
        for id in (0..=loss.0).rev() {
            if !self.nodes[id].requires_grad {
                continue;
            }
            let Some(g) = self.grads[id].take() else {
                continue;
            };
            if self.fault.is_some() && self.fault == Some(self.nodes[id].op.name()) {
                let bad: Vec<T> = g.iter().map(|&v| v * T::from_f64(1.5)).collect();
                self.backprop_node(id, &bad);
            } else {
                self.backprop_node(id, &g);
            }
            self.grads[id] = Some(g);
        }
        for (id, node) in self.nodes.iter().enumerate() {
            if node.requires_grad && matches!(node.op, Op::Leaf) && self.grads[id].is_none() {
                self.grads[id] = Some(vec![T::zero(); node.value.numel()]);
            }
        }
        Ok(())
    }

    /// Scales the upstream gradient of every `op` node by 1.5 during
    /// backward. Only for exercising gradient checkers.
    #[doc(hidden)]
    pub fn corrupt_backward(&mut self, op: &'static str) {
        self.fault = Some(op);
    }

    /// Fingerprint of every ReLU sign pattern and valve mask on the tape.
    /// Two evaluations with equal fingerprints lie on the same smooth piece.
    pub(crate) fn regime(&self) -> Vec<bool> {
        let mut out = Vec::new();
        for node in &self.nodes {
            match &node.op {
                Op::Relu(x) => out.extend(self.value(*x).data().iter().map(|&v| v > T::zero())),
                Op::Valve(_, open) => out.extend_from_slice(open),
                _ => {}
            }
        }
        out
    }
}

#[cfg(test)]
mod tests;
