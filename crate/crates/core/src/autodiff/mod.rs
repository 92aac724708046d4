//! Define-by-run reverse-mode differentiation over dense `f64` tensors.
//!
//! A [`Graph`] is an append-only tape: every operation records its output
//! eagerly, so a node's inputs always precede it and the reverse sweep is a
//! plain backwards walk. Learnable values live in a [`ParamStore`] and enter
//! a graph through [`Graph::param`]; [`Graph::backward`] accumulates into
//! the store, where [`Adam`] consumes the gradients.

mod gradcheck;
mod graph;
pub(crate) mod kernels;
mod optim;
mod tensor;

pub use gradcheck::{grad_check, grad_check_params, relative_error};
pub use graph::{Gradients, Graph, NodeId, OpKind};
pub(crate) use graph::sigmoid;
pub use optim::{Adam, ParamId, ParamStore, Parameter};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: {detail}")]
    Invalid { op: &'static str, detail: String },
    #[error("unknown op kind `{0}`")]
    UnknownOp(String),
    #[error("tensor shape {shape:?} does not hold {len} values")]
    BadTensor { shape: Vec<usize>, len: usize },
    #[error("{op} produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("parameter `{0}` has no gradient")]
    MissingGrad(String),
    #[error("duplicate parameter name `{0}`")]
    DuplicateParam(String),
}
