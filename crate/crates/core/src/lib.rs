//! Self-training for unsupervised cross-domain adaptation of embedding models.
//!
//! The pipeline alternates a conservative stage (triplet losses over density
//! based pseudo labels and k-reciprocal rankings) with a promoting stage
//! (softmax classification over the current clusters).

pub mod cluster;
pub mod config;
pub mod error;
pub mod eval;
pub mod loss;
pub mod matrix;
pub mod model;
pub mod rerank;
pub mod sampling;
pub mod store;
pub mod sweep;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
pub use matrix::Matrix;
