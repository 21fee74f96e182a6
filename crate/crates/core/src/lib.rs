pub mod cli;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod kv;
pub mod lidar;
pub mod network;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
