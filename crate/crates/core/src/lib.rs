pub mod error;
pub mod fock;
pub mod harness;
pub mod lattice;
pub mod learning;
pub mod reservoir;
pub mod spectral;
pub mod tasks;

pub use error::{Error, Result};
