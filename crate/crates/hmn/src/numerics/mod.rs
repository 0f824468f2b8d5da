//! Minimal dense-array value system with reverse-mode differentiation.
//!
//! The primitive set (add, mul, matvec, concat, row-select, sum-rows, sigmoid,
//! tanh, softmax, dot, plus the scalar glue the loss needs) is closed over the
//! whole model: gated recurrences, multi-hop attention, the vocabulary head and
//! the joint negative log-likelihood all lower onto these ops. Graphs are
//! rebuilt per forward pass since history and knowledge-base lengths vary per
//! sample.

mod array;
mod check;
mod graph;

pub use array::{Array, NamedArrays, Real, TrainReal};
pub use check::{finite_difference_check, FdGroup, FdReport};
pub use graph::{bind_params, collect_grads, BoundParams, Graph, NodeId};

/// Errors from graph construction and the reverse pass.
#[derive(Debug, thiserror::Error)]
pub enum NumericsError {
    #[error("{kind}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        kind: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("shape {shape:?} does not fit {len} elements")]
    BadShape { shape: Vec<usize>, len: usize },
    #[error("{kind}: index {index} out of range for length {len}")]
    IndexOutOfRange {
        kind: &'static str,
        index: usize,
        len: usize,
    },
    #[error("{0}: at least one input required")]
    EmptyInput(&'static str),
    #[error("backward requires a scalar root, got shape {shape:?}")]
    NonScalarRoot { shape: Vec<usize> },
    #[error("duplicate array name {0:?}")]
    DuplicateName(String),
}
