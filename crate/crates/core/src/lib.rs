pub mod analysis;
pub mod cli;
pub(crate) mod codec;
pub mod data;
pub mod error;
pub mod learn;
pub mod model;
pub mod rng;
pub mod topo;
pub mod walk;

pub use error::{Error, Result};
