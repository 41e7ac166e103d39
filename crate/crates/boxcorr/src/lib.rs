//! Desk-scale box-correspondence self-supervised pretraining.
//!
//! The pipeline: crop a base view from each image, derive V augmented views,
//! sample boxes in the base frame and project them into every view, extract
//! per-box features from a small conv backbone, and train an online network
//! to predict an EMA target network's box embeddings (BYOL-style), optionally
//! with box-localization auxiliary losses (contrastive box prediction, or
//! box regression through a cross-attention decoder).
//!
//! The numeric core (`tensor`, `geometry`, `roi`, `nn`, `loss`) is generic
//! over the [`Scalar`] type: `f32` drives training, `f64` drives gradient
//! checks and geometry oracles through the same kernels.

pub mod augment;
pub mod cli;
pub mod geometry;
pub mod loss;
pub mod nn;
pub mod roi;
mod scalar;
pub mod tensor;
pub mod train;
pub mod verify;

pub use scalar::Scalar;
pub use tensor::{Tape, Tensor, TensorError};

/// Training-precision tensor.
pub type Tensor32 = Tensor<f32>;
/// Verification-precision tensor.
pub type Tensor64 = Tensor<f64>;
/// Training-precision tape.
pub type Tape32 = Tape<f32>;
/// Verification-precision tape.
pub type Tape64 = Tape<f64>;
