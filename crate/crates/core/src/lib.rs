//! Multi-label chest X-ray classification toolkit.

pub mod cli;
pub mod data;
pub mod error;
pub mod explain;
pub mod metrics;
pub mod model;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
