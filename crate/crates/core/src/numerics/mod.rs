//! Dense `f64` arrays and a reverse-mode tape sufficient for the whole model.
//!
//! Every differentiable computation in the crate, including CRF
//! forward-backward, is written against [`Tape`] so its gradient comes from
//! replaying primitive adjoints. [`grad_check`] audits the result.

mod gradcheck;
mod params;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, CoordinateFailure, GradCheckReport};
pub use params::{GradSlot, Gradients, Param, ParamId, ParamStore};
pub use tape::{Tape, Var};
pub use tensor::{dropout_mask, log_sum_exp, sigmoid, softmax, Tensor};

pub(crate) use tensor::dot;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op}: expected rank {expected}, got shape {shape:?}")]
    Rank {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },
    #[error("shape {shape:?} needs {} values, got {len}", .shape.iter().product::<usize>())]
    ValueCount { shape: Vec<usize>, len: usize },
    #[error("{op}: empty input")]
    Empty { op: &'static str },
    #[error("{op}: index {index} out of bounds for length {len}")]
    Index {
        op: &'static str,
        index: usize,
        len: usize,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
}

impl NumericsError {
    pub(crate) fn shape(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        NumericsError::Shape {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }
}
