//! Reverse-mode differentiation tape.
//!
//! Every primitive appends one node holding its output value, the ids of its
//! inputs and a vector-Jacobian closure. Ids are assigned in creation order,
//! so a node's parents always precede it and a single reverse sweep over the
//! ids visits every node exactly once.

use std::cell::{Ref, RefCell};
use std::fmt;

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Maps the upstream gradient to one optional gradient per input.
/// Arguments: upstream gradient, input values, output value.
pub(crate) type BackwardFn = Box<dyn Fn(&Tensor, &[&Tensor], &Tensor) -> Vec<Option<Tensor>>>;

struct Node {
    value: Tensor,
    parents: Vec<usize>,
    backward: Option<BackwardFn>,
    requires_grad: bool,
}

#[derive(Default)]
struct Inner {
    nodes: Vec<Node>,
    grads: Option<Vec<Option<Tensor>>>,
}

/// Ordered record of primitive applications for one forward pass.
#[derive(Default)]
pub struct Tape {
    inner: RefCell<Inner>,
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let inner = self.inner.borrow();
        f.debug_struct("Tape")
            .field("nodes", &inner.nodes.len())
            .field("backward_done", &inner.grads.is_some())
            .finish()
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct DiffTensor<'t> {
    pub(crate) tape: &'t Tape,
    pub(crate) id: usize,
}

impl fmt::Debug for DiffTensor<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "DiffTensor#{} {:?}", self.id, self.value())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Leaf that receives a gradient.
    pub fn var(&self, value: Tensor) -> DiffTensor<'_> {
        self.push_leaf(value, true)
    }

    /// Leaf treated as a constant.
    pub fn constant(&self, value: Tensor) -> DiffTensor<'_> {
        self.push_leaf(value, false)
    }

    fn push_leaf(&self, value: Tensor, requires_grad: bool) -> DiffTensor<'_> {
        let mut inner = self.inner.borrow_mut();
        let id = inner.nodes.len();
        inner.nodes.push(Node {
            value,
            parents: Vec::new(),
            backward: None,
            requires_grad,
        });
        DiffTensor { tape: self, id }
    }

    /// Records a primitive. The closure is dropped when no input needs a gradient.
    pub(crate) fn record(
        &self,
        value: Tensor,
        parents: &[DiffTensor<'_>],
        backward: BackwardFn,
    ) -> DiffTensor<'_> {
        let mut inner = self.inner.borrow_mut();
        let requires_grad = parents.iter().any(|p| {
            debug_assert!(std::ptr::eq(p.tape, self), "mixing tensors from different tapes");
            inner.nodes[p.id].requires_grad
        });
        let id = inner.nodes.len();
        inner.nodes.push(Node {
            value,
            parents: parents.iter().map(|p| p.id).collect(),
            backward: requires_grad.then_some(backward),
            requires_grad,
        });
        DiffTensor { tape: self, id }
    }

    /// Runs the reverse sweep from a scalar root.
    ///
    /// Afterwards every node that requires a gradient has one (zeros when the
    /// root does not depend on it). A second call without [`Tape::zero_grad`]
    /// is rejected.
    pub fn backward(&self, root: DiffTensor<'_>) -> Result<()> {
        let mut inner = self.inner.borrow_mut();
        if inner.grads.is_some() {
            return Err(Error::BackwardTwice);
        }
        let root_value = &inner.nodes[root.id].value;
        if root_value.numel() != 1 {
            return Err(Error::NonScalarRoot(root_value.shape().to_vec()));
        }

        let nodes = &inner.nodes;
        let mut acc: Vec<Option<Vec<f64>>> = vec![None; root.id + 1];
        acc[root.id] = Some(vec![1.0]);

        for id in (0..=root.id).rev() {
            let Some(g) = acc[id].take() else { continue };
            let node = &nodes[id];
            let grad = Tensor::from_parts(node.value.shape().to_vec(), g);
            if let Some(backward) = &node.backward {
                let inputs: Vec<&Tensor> = node.parents.iter().map(|&p| &nodes[p].value).collect();
                let parent_grads = backward(&grad, &inputs, &node.value);
                debug_assert_eq!(parent_grads.len(), node.parents.len());
                for (&p, pg) in node.parents.iter().zip(parent_grads) {
                    let Some(pg) = pg else { continue };
                    if !nodes[p].requires_grad {
                        continue;
                    }
                    debug_assert_eq!(pg.shape(), nodes[p].value.shape());
                    match &mut acc[p] {
                        Some(existing) => {
                            for (e, v) in existing.iter_mut().zip(pg.data()) {
                                *e += v;
                            }
                        }
                        slot @ None => *slot = Some(pg.into_vec()),
                    }
                }
            }
            // keep the gradient on the node for inspection
            acc[id] = Some(grad.into_vec());
        }

        let grads = nodes
            .iter()
            .enumerate()
            .map(|(id, node)| {
                if !node.requires_grad {
                    return None;
                }
                let data = acc
                    .get_mut(id)
                    .and_then(Option::take)
                    .unwrap_or_else(|| vec![0.0; node.value.numel()]);
                Some(Tensor::from_parts(node.value.shape().to_vec(), data))
            })
            .collect();
        inner.grads = Some(grads);
        Ok(())
    }

    /// Discards gradients from a previous backward pass.
    pub fn zero_grad(&self) {
        self.inner.borrow_mut().grads = None;
    }

    pub(crate) fn value_ref(&self, id: usize) -> Ref<'_, Tensor> {
        Ref::map(self.inner.borrow(), |inner| &inner.nodes[id].value)
    }

    fn grad_of(&self, id: usize) -> Option<Tensor> {
        self.inner
            .borrow()
            .grads
            .as_ref()
            .and_then(|g| g[id].clone())
    }

    fn requires_grad(&self, id: usize) -> bool {
        self.inner.borrow().nodes[id].requires_grad
    }

    /// Parent ids of a node, for structural tests.
    pub fn parents_of(&self, id: usize) -> Vec<usize> {
        self.inner.borrow().nodes[id].parents.clone()
    }
}

impl<'t> DiffTensor<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Tensor {
        self.tape.value_ref(self.id).clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.value_ref(self.id).shape().to_vec()
    }

    pub fn numel(&self) -> usize {
        self.tape.value_ref(self.id).numel()
    }

    pub fn item(&self) -> f64 {
        self.tape.value_ref(self.id).item()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires_grad(self.id)
    }

    /// Gradient from the last backward pass; `None` before backward or for constants.
    pub fn grad(&self) -> Option<Tensor> {
        self.tape.grad_of(self.id)
    }

    pub fn backward(&self) -> Result<()> {
        self.tape.backward(*self)
    }
}
