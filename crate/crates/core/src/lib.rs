pub mod bench;
pub mod error;
pub mod frames;
pub mod interpolants;
pub mod model;
pub mod quat;
pub mod so3_stats;
pub mod solvers;
pub mod stats;
pub mod toy;

pub use error::{Error, Result};
