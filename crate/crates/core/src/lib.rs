//! Answer sentence reranking with a convolutional question/answer matching
//! network.
//!
//! Questions and candidate answers are each encoded by a single wide
//! convolution + ReLU + max-pooling layer over word embeddings. Words shared
//! between the two sentences carry an overlap flag whose embedding is learned
//! jointly with the rest of the network. The two sentence vectors, their
//! bilinear similarity and optional overlap-count features feed a hidden layer
//! and a two-class softmax; the class-1 probability ranks the candidates.
//!
//! Everything is computed in `f64` with hand-derived gradients, verified
//! against central finite differences by [`numeric::gradcheck`].

pub mod checkpoint;
pub mod container;
pub mod data;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod model;
pub mod numeric;
pub mod synthetic;
pub mod text;
pub mod train;

pub use error::{Error, Result};
