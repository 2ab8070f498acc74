pub mod autodiff;
pub mod error;

pub use error::{Error, Result};
pub mod encoder;
pub mod nn;
pub mod heads;
pub mod data;
pub mod model;
pub mod trainer;
pub mod inference;
pub mod checkpoint;
pub mod experiments;
