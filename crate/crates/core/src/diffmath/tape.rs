//! Tape-based reverse-mode differentiation over dense tensors.
//!
//! Every op appends a node holding its output value and, when any input is
//! tracked, a closure that scatters the output gradient into its inputs.
//! `backward` walks the nodes in reverse insertion order, which is a
//! topological order because inputs always precede their consumers.

use super::tensor::{numel, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub(crate) type BackwardFn<T> = Box<dyn Fn(&BackwardCtx<'_, T>, &mut Grads<T>)>;

struct Node<T> {
    shape: Vec<usize>,
    value: Vec<T>,
    tracked: bool,
    backward: Option<BackwardFn<T>>,
}

/// Read access to forward values while a node's backward rule runs.
pub struct BackwardCtx<'a, T> {
    nodes: &'a [Node<T>],
    out: usize,
    grad: &'a [T],
}

impl<'a, T> BackwardCtx<'a, T> {
    pub fn value(&self, v: Var) -> &'a [T] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &'a [usize] {
        &self.nodes[v.0].shape
    }

    pub fn out_value(&self) -> &'a [T] {
        &self.nodes[self.out].value
    }

    /// Gradient flowing into the node being processed.
    pub fn grad(&self) -> &'a [T] {
        self.grad
    }
}

/// Gradient accumulators, allocated lazily for tracked nodes only.
pub struct Grads<T> {
    slots: Vec<Option<Vec<T>>>,
    lens: Vec<usize>,
    tracked: Vec<bool>,
}

impl<T: Scalar> Grads<T> {
    /// Mutable accumulator for `v`, or `None` when `v` does not need a gradient.
    pub fn slot(&mut self, v: Var) -> Option<&mut [T]> {
        if !self.tracked[v.0] {
            return None;
        }
        let len = self.lens[v.0];
        Some(
            self.slots[v.0]
                .get_or_insert_with(|| vec![T::zero(); len])
                .as_mut_slice(),
        )
    }

    pub fn wants(&self, v: Var) -> bool {
        self.tracked[v.0]
    }
}

pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    grads: Option<Vec<Option<Vec<T>>>>,
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
            grads: None,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Whether every recorded value is finite.
    pub fn all_finite(&self) -> bool {
        self.nodes.iter().all(|n| n.value.iter().all(|v| v.is_finite()))
    }

    /// Differentiable input (parameter or variable under test).
    pub fn leaf(&mut self, t: Tensor<T>) -> Var {
        self.raw_push(t.shape, t.data, true, None)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.raw_push(t.shape, t.data, false, None)
    }

    pub fn constant_from(&mut self, shape: &[usize], data: Vec<T>) -> Result<Var> {
        Ok(self.constant(Tensor::new(shape.to_vec(), data)?))
    }

    pub fn scalar_const(&mut self, v: T) -> Var {
        self.constant(Tensor::scalar(v))
    }

    /// Copy of `v`'s value cut off from the graph.
    pub fn detach(&mut self, v: Var) -> Var {
        let n = &self.nodes[v.0];
        let (shape, value) = (n.shape.clone(), n.value.clone());
        self.raw_push(shape, value, false, None)
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn tensor(&self, v: Var) -> Tensor<T> {
        Tensor {
            shape: self.nodes[v.0].shape.clone(),
            data: self.nodes[v.0].value.clone(),
        }
    }

    pub fn is_tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    /// The single value of a one-element node.
    pub fn item(&self, v: Var) -> T {
        self.nodes[v.0].value[0]
    }

    /// Records an op output. The backward rule is dropped when no input is tracked.
    pub(crate) fn push<F>(&mut self, shape: Vec<usize>, value: Vec<T>, inputs: &[Var], backward: F) -> Var
    where
        F: Fn(&BackwardCtx<'_, T>, &mut Grads<T>) + 'static,
    {
        let tracked = inputs.iter().any(|v| self.nodes[v.0].tracked);
        let bw: Option<BackwardFn<T>> = if tracked { Some(Box::new(backward)) } else { None };
        self.raw_push(shape, value, tracked, bw)
    }

    fn raw_push(&mut self, shape: Vec<usize>, value: Vec<T>, tracked: bool, backward: Option<BackwardFn<T>>) -> Var {
        debug_assert_eq!(numel(&shape), value.len(), "node value count must match shape");
        self.nodes.push(Node {
            shape,
            value,
            tracked,
            backward,
        });
        Var(self.nodes.len() - 1)
    }

    /// Accumulates d(loss)/d(node) for every tracked node.
    ///
    /// A tape can be differentiated once; a second call is rejected rather
    /// than silently accumulating.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.grads.is_some() {
            return Err(Error::Tape("backward already ran on this tape".into()));
        }
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::Domain(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].shape
            )));
        }
        let mut grads = Grads {
            slots: (0..self.nodes.len()).map(|_| None).collect(),
            lens: self.nodes.iter().map(|n| n.value.len()).collect(),
            tracked: self.nodes.iter().map(|n| n.tracked).collect(),
        };
        if self.nodes[loss.0].tracked {
            grads.slots[loss.0] = Some(vec![T::one()]);
        }
        for i in (0..=loss.0).rev() {
            let Some(g) = grads.slots[i].take() else { continue };
            if let Some(bw) = &self.nodes[i].backward {
                let ctx = BackwardCtx {
                    nodes: &self.nodes,
                    out: i,
                    grad: &g,
                };
                bw(&ctx, &mut grads);
            }
            // leaves keep their gradient; interior buffers are freed as we go
            if self.nodes[i].backward.is_none() {
                grads.slots[i] = Some(g);
            }
        }
        self.grads = Some(grads.slots);
        Ok(())
    }

    /// Gradient of the last backward pass w.r.t. a leaf. Zero-filled when
    /// the leaf was tracked but unreachable from the loss.
    pub fn grad(&self, v: Var) -> Option<Vec<T>> {
        let grads = self.grads.as_ref()?;
        if !self.nodes[v.0].tracked {
            return None;
        }
        Some(
            grads[v.0]
                .clone()
                .unwrap_or_else(|| vec![T::zero(); self.nodes[v.0].value.len()]),
        )
    }
}
