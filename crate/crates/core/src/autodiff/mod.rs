//! Reverse-mode automatic differentiation over dense `f64` arrays.
//!
//! The op set is what the separation and transcription networks and their
//! losses need: elementwise arithmetic, reductions, max-over-axis, 1-D
//! dilated convolution and dense layers. Everything is double precision.

mod adam;
mod array;
mod checkpoint;
mod gemm;
mod graph;
mod params;

pub use adam::Adam;
pub use array::Array;
pub use checkpoint::{Checkpoint, CheckpointError, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use graph::{Graph, Tensor};
pub use params::{ParamId, ParamStore};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AutodiffError {
    #[error("{op}: shape mismatch {lhs:?} vs {rhs:?}")]
    ShapeMismatch { op: &'static str, lhs: Vec<usize>, rhs: Vec<usize> },
    #[error("{op}: {msg}")]
    InvalidArgument { op: &'static str, msg: String },
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
}
