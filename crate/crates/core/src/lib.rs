pub mod complexity;
pub mod csvio;
pub mod downstream;
pub mod encoder;
pub mod error;
pub mod linalg;
pub mod objectives;
pub mod process;
pub mod spectral;

pub use error::{Error, Result};
