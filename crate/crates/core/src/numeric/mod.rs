//! Dense kernels with forward and backward passes.

mod conv;
pub mod gradcheck;
mod matrix;
mod ops;

pub use conv::{conv1d_backward, conv1d_forward, ConvGrads, ConvMode, FilterBank};
pub use gradcheck::{gradient_check, GradCheckError, GradCheckReport, ParameterBlocks};
pub use matrix::DenseMatrix;
pub use ops::{
    affine, affine_backward, bilinear, bilinear_backward, maxpool_backward, maxpool_rows, relu,
    relu_grad, softmax_nll, AffineGrads, BilinearGrads, SoftmaxNll,
};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ShapeError {
    #[error("{op}: expected {expected}, got {actual}")]
    Mismatch {
        op: &'static str,
        expected: String,
        actual: String,
    },
    #[error("{op}: narrow convolution needs at least {width} columns, got {len}")]
    TooShort {
        op: &'static str,
        len: usize,
        width: usize,
    },
    #[error("{op}: empty input")]
    Empty { op: &'static str },
}

impl ShapeError {
    pub(crate) fn mismatch(
        op: &'static str,
        expected: impl ToString,
        actual: impl ToString,
    ) -> Self {
        ShapeError::Mismatch {
            op,
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }
}
