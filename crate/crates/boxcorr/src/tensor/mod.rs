//! Dense arrays with reverse-mode automatic differentiation.
//!
//! A [`Tensor`] is an immutable n-d array, optionally attached to a [`Tape`].
//! Every primitive records an exact vector-Jacobian product when at least one
//! input lives on a tape; tensors built from constants stay off-tape and flow
//! through the same forward kernels without recording anything, which is how
//! the target network gets its stop-gradient for free.

mod conv;
mod gradcheck;
pub(crate) mod kernels;
mod ops;
mod tape;

pub use gradcheck::{grad_check, rel_err, GradReport};
pub use tape::Tape;

use crate::scalar::Scalar;
use std::rc::Rc;

/// Errors raised by tensor construction and forward ops.
#[derive(Debug, thiserror::Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: invalid shape or arguments: {detail}")]
    Invalid { op: &'static str, detail: String },
    #[error("{op}: non-finite value in result")]
    NonFinite { op: &'static str },
    #[error("{op}: inputs recorded on different tapes")]
    MixedTapes { op: &'static str },
    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NotScalar { shape: Vec<usize> },
    #[error("backward requires a tensor recorded on a tape")]
    NotOnTape,
}

pub(crate) struct TensorData<S> {
    pub shape: Vec<usize>,
    pub data: Vec<S>,
}

pub(crate) struct NodeRef<S: Scalar> {
    pub tape: Tape<S>,
    pub id: usize,
}

impl<S: Scalar> Clone for NodeRef<S> {
    fn clone(&self) -> Self {
        NodeRef {
            tape: self.tape.clone(),
            id: self.id,
        }
    }
}

/// Immutable dense array, possibly recorded on a tape.
pub struct Tensor<S: Scalar> {
    pub(crate) td: Rc<TensorData<S>>,
    pub(crate) node: Option<NodeRef<S>>,
}

impl<S: Scalar> Clone for Tensor<S> {
    fn clone(&self) -> Self {
        Tensor {
            td: Rc::clone(&self.td),
            node: self.node.clone(),
        }
    }
}

impl<S: Scalar> std::fmt::Debug for Tensor<S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.td.shape)
            .field("on_tape", &self.node.is_some())
            .finish()
    }
}

pub(crate) fn check_shape<S: Scalar>(
    op: &'static str,
    shape: &[usize],
    data: &[S],
) -> Result<(), TensorError> {
    if shape.is_empty() || shape.iter().any(|&d| d == 0) {
        return Err(TensorError::Invalid {
            op,
            detail: format!("dimensions must be positive, got {shape:?}"),
        });
    }
    let numel: usize = shape.iter().product();
    if numel != data.len() {
        return Err(TensorError::Invalid {
            op,
            detail: format!(
                "shape {shape:?} implies {numel} elements, data has {}",
                data.len()
            ),
        });
    }
    Ok(())
}

pub(crate) fn ensure_finite<S: Scalar>(op: &'static str, data: &[S]) -> Result<(), TensorError> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(TensorError::NonFinite { op })
    }
}

impl<S: Scalar> Tensor<S> {
    /// Off-tape tensor from raw data. Gradients never flow to it.
    pub fn constant(data: Vec<S>, shape: &[usize]) -> Result<Self, TensorError> {
        check_shape("constant", shape, &data)?;
        ensure_finite("constant", &data)?;
        Ok(Tensor {
            td: Rc::new(TensorData {
                shape: shape.to_vec(),
                data,
            }),
            node: None,
        })
    }

    /// Scalar constant with shape `[1]`.
    pub fn scalar(v: S) -> Self {
        Tensor::constant(vec![v], &[1]).expect("scalar construction")
    }

    pub fn shape(&self) -> &[usize] {
        &self.td.shape
    }

    pub fn data(&self) -> &[S] {
        &self.td.data
    }

    pub fn numel(&self) -> usize {
        self.td.data.len()
    }

    /// Value of a `[1]`-shaped tensor.
    pub fn item(&self) -> S {
        debug_assert_eq!(self.numel(), 1, "item() on non-scalar tensor");
        self.td.data[0]
    }

    pub fn is_on_tape(&self) -> bool {
        self.node.is_some()
    }

    /// True for tensors registered directly on a tape (parameters/inputs),
    /// as opposed to op results.
    pub fn is_leaf(&self) -> bool {
        match &self.node {
            Some(nr) => nr.tape.is_leaf(nr.id),
            None => false,
        }
    }

    /// Accumulated gradient for a leaf; zeros if no backward pass touched it,
    /// `None` if the tensor is not a tape leaf.
    pub fn grad(&self) -> Option<Vec<S>> {
        let nr = self.node.as_ref()?;
        if !nr.tape.is_leaf(nr.id) {
            return None;
        }
        Some(
            nr.tape
                .leaf_grad(nr.id)
                .unwrap_or_else(|| vec![S::zero(); self.numel()]),
        )
    }

    /// Reverse pass from a scalar loss; leaf gradients accumulate on the tape.
    pub fn backward(&self) -> Result<(), TensorError> {
        let nr = self.node.as_ref().ok_or(TensorError::NotOnTape)?;
        if self.numel() != 1 {
            return Err(TensorError::NotScalar {
                shape: self.shape().to_vec(),
            });
        }
        nr.tape.backward_from(nr.id);
        Ok(())
    }

    /// Detached copy: same values, off-tape.
    pub fn detach(&self) -> Self {
        Tensor {
            td: Rc::clone(&self.td),
            node: None,
        }
    }

    /// Records an op result: validates the output, finds the common tape among
    /// inputs, and registers the VJP when any input is on tape. Inputs on
    /// different tapes are rejected. `vjp(upstream, needs)` returns one
    /// gradient per input, `None` allowed where `needs` is false.
    pub(crate) fn from_op<F>(
        op: &'static str,
        inputs: &[&Tensor<S>],
        shape: Vec<usize>,
        data: Vec<S>,
        vjp: F,
    ) -> Result<Self, TensorError>
    where
        F: Fn(&[S], &[bool]) -> Vec<Option<Vec<S>>> + 'static,
    {
        check_shape(op, &shape, &data)?;
        ensure_finite(op, &data)?;

        let mut tape: Option<Tape<S>> = None;
        for t in inputs {
            if let Some(nr) = &t.node {
                match &tape {
                    None => tape = Some(nr.tape.clone()),
                    Some(existing) => {
                        if !existing.same_tape(&nr.tape) {
                            return Err(TensorError::MixedTapes { op });
                        }
                    }
                }
            }
        }

        let numel = data.len();
        let td = Rc::new(TensorData { shape, data });
        let node = match tape {
            None => None,
            Some(tape) => {
                let parents: Vec<Option<usize>> =
                    inputs.iter().map(|t| t.node.as_ref().map(|n| n.id)).collect();
                let id = tape.record_op(op, parents, Box::new(vjp), numel);
                Some(NodeRef { tape, id })
            }
        };
        Ok(Tensor { td, node })
    }
}
