//! The pair-scoring network: two sentence encoders, bilinear similarity,
//! join layer, hidden layer and two-class softmax.

mod check;
mod grads;
mod network;
mod params;

pub use check::{check_network_gradients, GradCheckConfig, FEATURE_BLOCK};
pub use grads::Gradients;
pub use network::ForwardCache;
pub use params::{Block, HyperParams, ModelParams, RelationalMode};

use thiserror::Error;

use crate::numeric::ShapeError;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("invalid hyperparameters: {0}")]
    InvalidHyperParams(String),
    #[error("sentence has no tokens")]
    EmptySentence,
    #[error("token index {index} outside vocabulary of {vocab}")]
    TokenOutOfRange { index: usize, vocab: usize },
    #[error("expected {expected} overlap-count features, got {actual}")]
    FeatureLength { expected: usize, actual: usize },
    #[error(
        "forward cache is stale: built at parameter version {cache}, parameters are at {params}"
    )]
    StaleCache { cache: u64, params: u64 },
    #[error("label {0} is not binary")]
    BadLabel(u8),
    #[error(transparent)]
    Shape(#[from] ShapeError),
}
