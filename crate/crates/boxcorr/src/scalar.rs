//! Floating-point scalar abstraction for the compute kernels.
//!
//! Training runs at f32; verification (gradient checks, geometry oracles)
//! runs the very same generic code at f64. Conversions route through f64,
//! which is exact for every value either width can hold.

use std::fmt::{Debug, Display};

pub trait Scalar:
    num_traits::Float + num_traits::NumAssignOps + Debug + Display + Default + Send + Sync + 'static
{
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
    fn from_usize(v: usize) -> Self {
        Self::from_f64(v as f64)
    }
}

impl Scalar for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
}
