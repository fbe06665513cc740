//! Tape of recorded operations and the reverse sweep over it.
//!
//! Nodes are appended in creation order, so node indices are already a
//! topological order and the reverse sweep is a single backwards scan.

use crate::error::{Result, TensorError};
use crate::ops::Op;
use crate::real::Real;
use crate::tensor::{numel, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub(crate) struct Node<F: Real> {
    pub shape: Vec<usize>,
    pub value: Vec<F>,
    pub op: Op<F>,
    pub requires_grad: bool,
}

/// A single forward pass. Confined to one thread; build one per work item.
pub struct Graph<F: Real> {
    pub(crate) nodes: Vec<Node<F>>,
    grad_enabled: bool,
    grads: Vec<Option<Vec<F>>>,
}

impl<F: Real> Default for Graph<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Real> Graph<F> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), grad_enabled: true, grads: Vec::new() }
    }

    /// A graph that never records backward information. Leaves registered
    /// with `requires_grad = true` are treated as constants.
    pub fn inference() -> Self {
        Graph { grad_enabled: false, ..Self::new() }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, t: Tensor<F>, requires_grad: bool) -> Var {
        let shape = t.shape().to_vec();
        let value = t.into_data();
        self.nodes.push(Node { shape, value, op: Op::Leaf, requires_grad: requires_grad && self.grad_enabled });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, t: Tensor<F>) -> Var {
        self.leaf(t, false)
    }

    pub fn leaf_from(&mut self, shape: &[usize], data: &[F], requires_grad: bool) -> Result<Var> {
        Ok(self.leaf(Tensor::new(shape.to_vec(), data.to_vec())?, requires_grad))
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn value(&self, v: Var) -> &[F] {
        &self.nodes[v.0].value
    }

    pub fn tensor(&self, v: Var) -> Tensor<F> {
        let n = &self.nodes[v.0];
        Tensor::new(n.shape.clone(), n.value.clone()).expect("node shape is consistent")
    }

    pub fn scalar(&self, v: Var) -> F {
        self.nodes[v.0].value[0]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient accumulated by the last [`Graph::backward`] call.
    pub fn grad(&self, v: Var) -> Option<&[F]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Vec<F>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }

    /// Appends a node computed by an op. Rejects non-finite outputs.
    pub(crate) fn push(&mut self, name: &'static str, shape: Vec<usize>, value: Vec<F>, op: Op<F>) -> Result<Var> {
        debug_assert_eq!(numel(&shape), value.len(), "{name}");
        if value.iter().any(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite { op: name });
        }
        let requires_grad = self.grad_enabled && op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node { shape, value, op, requires_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Reverse sweep from a scalar `loss`. Gradients of every node that
    /// requires grad are available through [`Graph::grad`] afterwards;
    /// contributions from multiple uses of a node are summed.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let node = &self.nodes[loss.0];
        if node.value.len() != 1 {
            return Err(TensorError::NotScalar(node.shape.clone()));
        }
        if !node.requires_grad {
            return Err(TensorError::DetachedGraph);
        }
        let mut grads: Vec<Option<Vec<F>>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[loss.0] = Some(vec![F::one()]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(upstream) = grads[i].take() else {
                continue;
            };
            let contributions = crate::ops::backward(&self.nodes, i, &upstream);
            grads[i] = Some(upstream);
            for (input, delta) in contributions {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => {
                        for (a, d) in acc.iter_mut().zip(delta) {
                            *a += d;
                        }
                    }
                    slot @ None => *slot = Some(delta),
                }
            }
        }
        self.grads = grads;
        Ok(())
    }
}
