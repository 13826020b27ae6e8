//! Minimal reverse-mode differentiation and the layers of the residual network.

mod adam;
mod gradcheck;
pub mod layers;
mod real;
mod tape;
mod tensor;

pub use adam::AdamState;
pub use gradcheck::{grad_check, grad_check_with_floor, relative_error, GradCheckReport, DEFAULT_FLOOR};
pub use layers::Mode;
pub use real::Real;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("shape mismatch: {0}")]
pub struct ShapeError(pub String);
