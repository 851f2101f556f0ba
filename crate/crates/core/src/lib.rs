pub mod classifiers;
pub mod cli;
pub mod cnn;
pub mod container;
pub mod data;
pub mod error;
pub mod fusion;
pub mod headsearch;
pub mod metrics;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
