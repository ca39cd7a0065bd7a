//! Noise-robust continual node classification on graphs.

pub mod encoder;
pub mod eval;
pub mod error;
pub mod flow;
pub mod graph;
pub mod reliability;
pub mod selftest;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
