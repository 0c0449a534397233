pub mod chunker;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod evaluator;
pub mod model;
pub mod numerics;
pub mod params;
pub mod synthetic;
pub mod trainer;

pub use error::{DcrError, Result};
