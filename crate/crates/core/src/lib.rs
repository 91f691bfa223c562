pub mod cli;
pub mod coupling;
pub mod data;
pub mod error;
pub mod explore;
pub mod metrics;
pub mod nn;
pub mod node;
pub mod persist;
pub mod relation;
pub mod report;
pub mod rng;

pub use error::{Error, Result};
