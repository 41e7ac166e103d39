//! Recording tape for reverse-mode differentiation.
//!
//! Nodes are appended in forward order, so parent indices always precede
//! children and the reverse pass is a single backward sweep. Leaf gradients
//! accumulate across backward calls until [`Tape::zero_grads`].
//!
//! VJP closures must capture raw data (`Rc<TensorData>` or vectors), never
//! whole `Tensor`s: a captured tensor would hold the tape alive in a cycle.

use super::{check_shape, ensure_finite, NodeRef, Tensor, TensorData, TensorError};
use crate::scalar::Scalar;
use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

type Vjp<S> = Box<dyn Fn(&[S], &[bool]) -> Vec<Option<Vec<S>>>>;

struct Node<S> {
    op: &'static str,
    parents: Vec<Option<usize>>,
    vjp: Option<Vjp<S>>,
    numel: usize,
}

struct TapeInner<S> {
    nodes: Vec<Node<S>>,
    leaf_grads: HashMap<usize, Vec<S>>,
}

/// Shared, clonable handle to one recording tape.
pub struct Tape<S: Scalar>(Rc<RefCell<TapeInner<S>>>);

impl<S: Scalar> Clone for Tape<S> {
    fn clone(&self) -> Self {
        Tape(Rc::clone(&self.0))
    }
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape(Rc::new(RefCell::new(TapeInner {
            nodes: Vec::new(),
            leaf_grads: HashMap::new(),
        })))
    }

    /// Registers a differentiable input (parameter) on the tape.
    pub fn leaf(&self, data: Vec<S>, shape: &[usize]) -> Result<Tensor<S>, TensorError> {
        check_shape("leaf", shape, &data)?;
        ensure_finite("leaf", &data)?;
        let numel = data.len();
        let id = {
            let mut inner = self.0.borrow_mut();
            inner.nodes.push(Node {
                op: "leaf",
                parents: Vec::new(),
                vjp: None,
                numel,
            });
            inner.nodes.len() - 1
        };
        Ok(Tensor {
            td: Rc::new(TensorData {
                shape: shape.to_vec(),
                data,
            }),
            node: Some(NodeRef {
                tape: self.clone(),
                id,
            }),
        })
    }

    pub(crate) fn record_op(
        &self,
        op: &'static str,
        parents: Vec<Option<usize>>,
        vjp: Vjp<S>,
        numel: usize,
    ) -> usize {
        let mut inner = self.0.borrow_mut();
        inner.nodes.push(Node {
            op,
            parents,
            vjp: Some(vjp),
            numel,
        });
        inner.nodes.len() - 1
    }

    pub(crate) fn same_tape(&self, other: &Tape<S>) -> bool {
        Rc::ptr_eq(&self.0, &other.0)
    }

    pub(crate) fn is_leaf(&self, id: usize) -> bool {
        self.0.borrow().nodes[id].vjp.is_none()
    }

    pub(crate) fn leaf_grad(&self, id: usize) -> Option<Vec<S>> {
        self.0.borrow().leaf_grads.get(&id).cloned()
    }

    /// Number of recorded nodes, for graph-size assertions.
    pub fn node_count(&self) -> usize {
        self.0.borrow().nodes.len()
    }

    /// Clears accumulated leaf gradients; the recorded graph is untouched.
    pub fn zero_grads(&self) {
        self.0.borrow_mut().leaf_grads.clear();
    }

    /// Single reverse sweep from `root`. Working gradients are fresh per
    /// call, so repeated backward passes never double-count; only the leaf
    /// accumulators persist.
    pub(crate) fn backward_from(&self, root: usize) {
        let mut inner = self.0.borrow_mut();
        let inner = &mut *inner;
        debug_assert_eq!(inner.nodes[root].numel, 1, "backward root must be scalar");

        let mut grads: Vec<Option<Vec<S>>> = Vec::with_capacity(root + 1);
        grads.resize_with(root + 1, || None);
        grads[root] = Some(vec![S::one(); 1]);

        for i in (0..=root).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &inner.nodes[i];
            match &node.vjp {
                None => {
                    let acc = inner
                        .leaf_grads
                        .entry(i)
                        .or_insert_with(|| vec![S::zero(); node.numel]);
                    debug_assert_eq!(acc.len(), g.len(), "leaf grad size for {}", node.op);
                    for (a, v) in acc.iter_mut().zip(&g) {
                        *a += *v;
                    }
                }
                Some(vjp) => {
                    let needs: Vec<bool> = node.parents.iter().map(|p| p.is_some()).collect();
                    let pgrads = vjp(&g, &needs);
                    debug_assert_eq!(
                        pgrads.len(),
                        node.parents.len(),
                        "vjp arity for {}",
                        node.op
                    );
                    for (parent, pg) in node.parents.clone().into_iter().zip(pgrads) {
                        let (Some(pid), Some(pg)) = (parent, pg) else {
                            continue;
                        };
                        match &mut grads[pid] {
                            Some(acc) => {
                                for (a, v) in acc.iter_mut().zip(&pg) {
                                    *a += *v;
                                }
                            }
                            None => grads[pid] = Some(pg),
                        }
                    }
                }
            }
        }
    }
}
