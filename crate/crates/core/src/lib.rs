pub mod degrade;
pub mod error;
pub mod image;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod nets;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
