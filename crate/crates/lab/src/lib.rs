//! Datasets, training driver, checkpoints and benchmarks on top of
//! `mest-core`.

pub mod bench;
pub mod checkpoint;
pub mod cli;
pub mod datasets;
pub mod error;
pub mod fsio;
pub mod report;
pub mod run;

pub use error::{LabError, Result};
