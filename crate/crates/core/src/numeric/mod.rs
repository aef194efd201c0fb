//! Tensors, reverse-mode autodiff, deterministic randomness, the
//! finite-difference gradient oracle, and the checkpoint container.

pub mod checkpoint;
pub mod gradcheck;
pub mod kernels;
pub mod params;
pub mod rng;
pub mod tape;
pub mod tensor;

pub use checkpoint::Checkpoint;
pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport};
pub use kernels::{set_strict_deterministic, strict_deterministic};
pub use params::{ParamId, ParamStore, Parameter};
pub use rng::Rng;
pub use tape::{Tape, Var};
pub use tensor::{Element, Tensor};

#[cfg(test)]
mod tests;
