use thiserror::Error;

use crate::container::ContainerError;
use crate::data::DataError;
use crate::eval::EvalError;
use crate::model::ModelError;
use crate::numeric::{GradCheckError, ShapeError};
use crate::text::EmbeddingError;
use crate::train::TrainError;

/// Top-level error for the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Container(#[from] ContainerError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    GradCheck(#[from] GradCheckError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
