//! Minimal dense tensors with a reverse-mode autodiff tape.
//!
//! Everything is row-major `f64`. Tensors are rank 0, 1 or 2; rank-1 tensors
//! behave as a single row wherever a matrix is expected. A [`Tape`] records
//! primitive operations as they are evaluated and [`Tape::backward`] replays
//! them in reverse to produce gradients for every leaf that asked for one.

mod adam;
mod error;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use error::TensorError;
pub use tape::{Gradients, Tape, Var, LAYER_NORM_EPS};
pub use tensor::Tensor;

pub type Result<T, E = TensorError> = std::result::Result<T, E>;
