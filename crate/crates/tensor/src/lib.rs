//! A small dense tensor engine: row-major storage, the handful of forward
//! operations a convolutional landmark network needs, a Wengert tape for
//! reverse-mode gradients, and the Adam optimizer.
//!
//! Every operation exists in two forms. The free functions in [`ops`] compute
//! values eagerly. The methods on [`Tape`] compute the same values through the
//! same kernels and additionally record what is needed to differentiate them.
//!
//! All code is generic over [`Scalar`], implemented for `f32` (training) and
//! `f64` (gradient checks).

mod adam;
mod error;
pub mod kernels;
pub mod ops;
mod scalar;
mod tape;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use error::{Result, TensorError};
pub use scalar::Scalar;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
