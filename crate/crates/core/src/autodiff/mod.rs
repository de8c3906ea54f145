//! Dynamic reverse-mode tape.
//!
//! Every forward pass records onto a fresh [`Graph`]. Nodes are appended in
//! execution order, so the node list is already topologically sorted and
//! [`Graph::backward`] is a single reverse sweep. A graph can be
//! differentiated exactly once.

mod ops;

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

pub(crate) use ops::Op;

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Identifies a trainable parameter in a [`crate::nn::ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    param: Option<ParamId>,
}

pub struct Graph<T: Element> {
    nodes: Vec<Node<T>>,
    consumed: bool,
}

impl<T: Element> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A leaf that is not differentiated.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push_leaf(value, false, None)
    }

    /// A differentiable leaf (gradient available via [`Gradients::wrt`]).
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push_leaf(value, true, None)
    }

    pub fn param(&mut self, id: ParamId, value: Tensor<T>) -> Var {
        self.push_leaf(value, true, Some(id))
    }

    fn push_leaf(&mut self, value: Tensor<T>, requires_grad: bool, param: Option<ParamId>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
            param,
        });
        Var(self.nodes.len() - 1)
    }

    pub(crate) fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Result<Var> {
        let inputs = op.inputs();
        if cfg!(debug_assertions) && !value.is_finite() && inputs.iter().all(|v| self.nodes[v.0].value.is_finite()) {
            return Err(Error::NonFinite { op: op.name() });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            param: None,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Reverse sweep from a scalar `loss`. Consumes the tape: a second call
    /// is a state error.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>> {
        if self.consumed {
            return Err(Error::State(
                "backward already ran on this graph; record a new forward pass".into(),
            ));
        }
        let loss_value = &self.nodes[loss.0].value;
        if loss_value.len() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                loss_value.shape()
            )));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::ones(loss_value.shape()));
        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(grad) = grads[idx].take() else {
                continue;
            };
            for (input, contribution) in self.nodes[idx].op.backward(self, idx, &grad) {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => acc.add_assign(&contribution),
                    slot => *slot = Some(contribution),
                }
            }
            grads[idx] = Some(grad);
        }
        // Intermediate gradients are kept only for leaves.
        for (node, grad) in self.nodes.iter().zip(grads.iter_mut()) {
            if !matches!(node.op, Op::Leaf) {
                *grad = None;
            }
        }
        let params = self
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| n.param.map(|p| (p, i)))
            .collect();
        Ok(Gradients { grads, params })
    }
}

pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    params: Vec<(ParamId, usize)>,
}

impl<T: Element> Gradients<T> {
    /// Gradient of the loss w.r.t. a leaf, if the loss depends on it.
    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Per-parameter gradients. A parameter bound to several leaves gets the
    /// sum of their gradients.
    pub fn into_params(mut self) -> Vec<(ParamId, Tensor<T>)> {
        let mut out: Vec<(ParamId, Tensor<T>)> = Vec::new();
        let mut params = std::mem::take(&mut self.params);
        params.sort_by_key(|&(p, i)| (p, i));
        for (id, idx) in params {
            let Some(g) = self.grads[idx].take() else {
                continue;
            };
            match out.last_mut() {
                Some((last, acc)) if *last == id => acc.add_assign(&g),
                _ => out.push((id, g)),
            }
        }
        out
    }
}
