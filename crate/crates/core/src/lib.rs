pub mod cli;
pub mod conditional;
pub mod error;
pub mod harness;
pub mod lattice;
pub mod models;
pub mod rng;
pub mod scalar;

pub use error::{Error, Result};
