//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every operation of one forward pass. Values are
//! computed eagerly when an op is recorded; [`Tape::backward`] then walks
//! the nodes in reverse and accumulates gradients into every input that
//! requires them. Learnable parameters live outside the tape as
//! [`Tensor`]s and are bound per pass with [`Tape::param`].
//!
//! There is no implicit broadcasting. The only mixed-shape ops are the
//! explicit bias additions and scalar scaling.

mod kernels;
mod loss;
mod optim;
mod tape;
mod tensor;

pub use loss::{LossBreakdown, LossWeights};
pub use optim::{AdamConfig, AdamState};
pub use tape::{ConvParams, Elementwise, Tape, Var};
pub use tensor::Tensor;

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign};
use thiserror::Error;

/// Floating point storage type of tensors. Implemented for `f32` (training)
/// and `f64` (gradient checks).
pub trait Real:
    Float + FromPrimitive + NumAssign + Sum + Debug + Display + Default + Send + Sync + 'static
{
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("finite constant")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Probability clamp used by binary cross-entropy.
    fn bce_eps() -> Self;
}

impl Real for f32 {
    fn bce_eps() -> Self {
        1e-6
    }
}

impl Real for f64 {
    fn bce_eps() -> Self {
        1e-12
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op}: invalid configuration: {reason}")]
    Config { op: &'static str, reason: String },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("variable belongs to a different tape")]
    ForeignVar,
    #[error("backward already ran on this tape; build a new tape for the next pass")]
    BackwardTwice,
    #[error("tensor data length {len} does not match shape {shape:?}")]
    DataLength { shape: Vec<usize>, len: usize },
}

pub type Result<T, E = AutodiffError> = std::result::Result<T, E>;
