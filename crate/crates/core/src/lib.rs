pub mod cli;
pub mod data;
pub mod error;
pub mod rng;
pub mod gradcheck;
pub mod losses;
pub mod metrics;
pub mod restorer;
pub mod semantic;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
