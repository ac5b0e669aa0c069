//! Reverse-mode differentiation on 64-bit dense tensors.

mod gradcheck;
mod graph;
mod params;
mod tensor;

pub use gradcheck::{
    compare, finite_difference, finite_difference_coords, sample_coords, GradCheckReport, ABS_FLOOR,
};
pub use graph::{logsumexp_row, Gradients, Graph, OpKind, Var, COSINE_EPS};
pub use params::{GradMap, ParamId, ParamStore};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("{op}: incompatible shapes {shapes:?}")]
    ShapeMismatch {
        op: &'static str,
        shapes: Vec<Vec<usize>>,
    },
    #[error("buffer of length {len} does not fit shape {shape:?}")]
    BadBuffer { shape: Vec<usize>, len: usize },
    #[error("backward needs a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("{op}: index {index} out of range (bound {bound})")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        bound: usize,
    },
}
