//! Reverse-mode differentiation over `f64` tensors.
//!
//! A [`Tape`] records every op of one forward pass; [`Tape::backward`] sweeps
//! it once in reverse and returns gradients for the differentiable leaves.
//! Model weights live in a [`ParamStore`] and are bound onto a fresh tape per
//! step.

pub mod checkpoint;
mod gradcheck;
mod linalg;
mod ops;
mod optim;
mod params;
mod tape;
mod tensor;

pub use gradcheck::grad_check;
pub use ops::{bce_value, Mode, RunningStats, BCE_EPS, BN_EPS};
pub use optim::{AdamConfig, AdamState};
pub use params::{init_he_uniform, init_uniform, Bound, ParamStore};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
