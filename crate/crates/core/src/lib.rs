pub mod balancing;
pub mod cli;
pub mod data;
pub mod error;
pub mod estimators;
pub mod kernels;
pub mod pipeline;
pub mod simulation;
pub mod smoothing;

pub use error::{CfbError, Result};
