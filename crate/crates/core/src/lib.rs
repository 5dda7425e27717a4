pub mod analytics;
pub mod criteria;
pub mod data;
pub mod error;
pub mod model;
pub mod optim;
pub mod predictor;
pub mod pruning;
pub mod tensor;

pub use error::{Error, Result};
