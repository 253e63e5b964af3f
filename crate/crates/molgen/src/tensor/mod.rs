//! Dense numeric core: arrays, reverse-mode autodiff, and the
//! adaptive-moment optimizer.
//!
//! Everything is generic over [`Scalar`] (`f32` or `f64`); the rest of the
//! crate pins `f64` through the aliases at the crate root. A [`Tape`] is a
//! define-by-run graph rebuilt per batch: operations record nodes in
//! execution order and [`Tape::backward`] walks them in exact reverse.

mod adam;
mod array;
mod tape;

pub use adam::AdamState;
pub use array::{matmul, NDArray};
pub use tape::{Gradients, NodeId, Tape};

use std::fmt::{Debug, Display};
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};
use thiserror::Error;

/// Floating-point scalar usable by the numeric core.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from `f64`, for literals and hyperparameters.
    fn from_f64_c(x: f64) -> Self {
        Self::from_f64(x).expect("finite f64 converts to every Scalar")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Errors from the numeric core.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("index {index} out of bounds for extent {extent} in {op}")]
    IndexOutOfBounds {
        op: &'static str,
        index: usize,
        extent: usize,
    },
}
