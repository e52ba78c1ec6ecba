//! Tape-based reverse-mode differentiation.
//!
//! Every forward op appends a node holding its value and, when any input
//! needs a gradient, a backward closure over its inputs. `backward` walks
//! the nodes in reverse insertion order, which is a valid reverse
//! topological order because an op can only reference earlier nodes.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Forward-pass behaviour of mode-dependent layers (batch norm, dropout).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Read access to forward values during the backward sweep.
pub(crate) struct BackwardCtx<'a, T> {
    nodes: &'a [Node<T>],
}

impl<'a, T: Scalar> BackwardCtx<'a, T> {
    pub fn value(&self, v: Var) -> &'a Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }
}

/// Gradient rule of one recorded op.
pub(crate) trait Backward<T: Scalar> {
    fn inputs(&self) -> Vec<Var>;

    /// Gradient contributions for each entry of `inputs()`, `None` where the
    /// input does not need one.
    fn backward(&self, ctx: &BackwardCtx<'_, T>, grad_out: &Tensor<T>) -> Vec<Option<Tensor<T>>>;
}

pub(crate) struct Node<T> {
    value: Tensor<T>,
    requires_grad: bool,
    op: Option<Box<dyn Backward<T>>>,
}

pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    params: Vec<(String, Var)>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Leaf that never receives a gradient (inputs, frozen weights).
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push_leaf(value, false)
    }

    /// Leaf that receives a gradient but is not a registered parameter.
    pub fn variable(&mut self, value: Tensor<T>) -> Var {
        self.push_leaf(value, true)
    }

    /// Registered trainable parameter.
    pub fn param(&mut self, name: impl Into<String>, value: Tensor<T>) -> Var {
        let v = self.push_leaf(value, true);
        self.params.push((name.into(), v));
        v
    }

    /// Registered parameter that is held fixed: it is listed by
    /// [`Gradients::param`] but always with a zero gradient.
    pub fn frozen_param(&mut self, name: impl Into<String>, value: Tensor<T>) -> Var {
        let v = self.push_leaf(value, false);
        self.params.push((name.into(), v));
        v
    }

    pub fn params(&self) -> &[(String, Var)] {
        &self.params
    }

    fn push_leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            op: None,
        });
        Var(self.nodes.len() - 1)
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

    /// Appends an op result. Fails if the forward value is not finite.
    pub(crate) fn push_op(
        &mut self,
        name: &'static str,
        value: Tensor<T>,
        op: Box<dyn Backward<T>>,
    ) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite { op: name });
        }
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            requires_grad,
            op: if requires_grad { Some(op) } else { None },
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let loss_value = &self.nodes[loss.0].value;
        if loss_value.numel() != 1 {
            return Err(Error::shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                loss_value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(loss_value.shape(), T::one()));
        let ctx = BackwardCtx { nodes: &self.nodes };

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            let Some(op) = node.op.as_ref() else {
                continue;
            };
            let Some(grad_out) = grads[idx].take() else {
                continue;
            };
            let inputs = op.inputs();
            let contributions = op.backward(&ctx, &grad_out);
            debug_assert_eq!(inputs.len(), contributions.len());
            for (input, contribution) in inputs.into_iter().zip(contributions) {
                let Some(g) = contribution else { continue };
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => {
                        for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                            *a += *b;
                        }
                    }
                    slot @ None => *slot = Some(g),
                }
            }
        }

        // interior gradients were consumed above; what remains are leaves
        let param_index = self
            .params
            .iter()
            .enumerate()
            .map(|(i, (name, _))| (name.clone(), i))
            .collect();
        Ok(Gradients {
            grads,
            params: self.params.clone(),
            param_index,
        })
    }
}

/// Leaf gradients produced by [`Tape::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    params: Vec<(String, Var)>,
    param_index: HashMap<String, usize>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of a leaf; `None` if the loss does not depend on it.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of a leaf, zeros when unreached.
    pub fn get_or_zeros(&self, v: Var, shape: &[usize]) -> Tensor<T> {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }

    /// Gradient of a registered parameter by name, `None` if no such name.
    /// Parameters off the loss path (or frozen) come back as zeros.
    pub fn param(&self, name: &str, tape: &Tape<T>) -> Option<Tensor<T>> {
        let &i = self.param_index.get(name)?;
        let v = self.params[i].1;
        Some(self.get_or_zeros(v, tape.shape(v)))
    }

    /// All registered parameter gradients in registration order.
    pub fn params<'a>(&'a self, tape: &'a Tape<T>) -> impl Iterator<Item = (&'a str, Tensor<T>)> + 'a {
        self.params
            .iter()
            .map(move |(name, v)| (name.as_str(), self.get_or_zeros(*v, tape.shape(*v))))
    }
}
