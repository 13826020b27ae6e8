//! The physics-embedded estimator and its two-phase training.

mod estimate;
mod model;
mod train;

pub use estimate::*;
pub use model::*;
pub use train::*;

use crate::diffnet::ShapeError;
use crate::msk::MskError;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PennError {
    #[error(transparent)]
    Model(#[from] MskError),
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error("invalid training setup: {0}")]
    Config(String),
    #[error("phase {phase} epoch {epoch}: {reason}; parameters: {}", fmt_snapshot(.snapshot))]
    Numerical {
        phase: u8,
        epoch: usize,
        reason: String,
        snapshot: Vec<(String, f64)>,
    },
}

fn fmt_snapshot(s: &[(String, f64)]) -> String {
    s.iter().map(|(k, v)| format!("{k}={v:.6e}")).collect::<Vec<_>>().join(", ")
}
