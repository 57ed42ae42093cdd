pub mod archive;
pub mod backend;
pub mod cli;
pub mod dataset;
pub mod embedders;
pub mod error;
pub mod evaluation;
pub mod gradcheck;
pub mod losses;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
