//! Minimal dense-tensor numerics with reverse-mode automatic differentiation.
//!
//! Values live on a [`Tape`]; every operation appends a node and the tape can
//! then be walked backwards from a scalar to produce gradients for every
//! trainable parameter bound from a [`ParamStore`]. Computation is generic over
//! [`Real`] so the same model code runs in `f32` for training and in `f64` for
//! finite-difference gradient checks.

mod error;
pub mod gradcheck;
pub mod nn;
pub mod ops;
pub mod optim;
mod params;
mod real;
mod tape;
mod tensor;

pub use error::{Result, TensorError};
pub use gradcheck::{grad_check, GradCheckReport};
pub use optim::{Adam, AdamConfig, AdamState, LrSchedule};
pub use params::{ParamId, ParamStore};
pub use real::Real;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
