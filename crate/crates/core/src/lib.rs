//! Knowledge-graph reasoning with dual-channel conditional message passing.

pub mod check;
pub mod cli;
pub mod error;
pub mod eval;
pub mod graph;
pub mod kgqa;
pub mod model;
pub mod numerics;
pub mod synthetic;
pub mod text;
pub mod train;

pub use error::{Error, Result};
