pub mod cli;
pub mod dataset;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod plots;
pub mod sg_head;
pub mod synthetic;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
