pub mod checkpoint;
pub mod data;
pub mod error;
pub mod graph;
pub mod layers;
pub mod metrics;
pub mod models;
pub mod optim;
pub mod runner;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
