//! Layer-wise linear probing of pretrained convolutional networks.
//!
//! The pipeline truncates a network at a named cut-point, max-pools the
//! activation to a fixed value budget, flattens it, and trains a softmax
//! probe on the result. [`experiment::run_sweep`] repeats that over every
//! cut-point and several seeds and aggregates test accuracy per layer.

pub mod codec;
pub mod dataset;
pub mod experiment;
pub mod features;
pub mod graph;
pub mod ops;
pub mod par;
pub mod probe;
pub mod tensor;

pub use codec::FormatError;
pub use tensor::{Tensor, TensorError};
