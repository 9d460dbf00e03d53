//! Dense row-major tensors with tape-based reverse-mode automatic
//! differentiation.
//!
//! Every tensor owns a contiguous buffer behind an `Rc`, so cloning a tensor
//! or detaching it never copies data. Operations are methods on [`Tape`];
//! a tape records an operation only when recording is enabled and at least
//! one input is tracked. Gradients are produced by [`Tape::backward`].
//!
//! The crate is generic over [`Scalar`] so that training can run in `f32`
//! while gradient checks run in `f64`.

pub mod error;
pub mod gradcheck;
pub mod kernels;
mod ops;
pub mod scalar;
pub mod tape;
pub mod tensor;

pub use error::{Result, TensorError};
pub use ops::nn::AttentionOptions;
pub use scalar::{Precision, Scalar};
pub use tape::{Gradients, NodeId, Tape};
pub use tensor::Tensor;
