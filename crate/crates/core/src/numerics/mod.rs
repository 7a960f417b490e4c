//! Dense numerics: matrices, reverse-mode differentiation, parameters,
//! optimisation and checkpointing.

pub mod checkpoint;
pub mod gradcheck;
pub mod matrix;
pub mod params;
pub mod tape;

pub use matrix::Matrix;
pub use params::{Adam, AdamConfig, Bound, ParamId, ParamStore};
pub use tape::{sigmoid, Gradients, Tape, Var};
