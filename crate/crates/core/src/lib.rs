//! Core of a desk-scale laboratory for memory-economic sparse training.
//!
//! Everything here is pure computation over in-memory values and builds
//! without `std`: the dense reference operators and their finite-difference
//! check, weight-sparsity schemes with their compressed encodings and memory
//! accounting, compressed compute kernels, importance-driven mask mutation,
//! forgetting-event bookkeeping, and the per-epoch training engine.
//! File formats, timing and the command line live in the `mest-lab` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod data;
pub mod error;
pub mod flops;
pub mod forgetting;
pub mod kernels;
pub mod mutation;
pub mod nn;
pub mod optim;
pub mod rng;
pub mod sparsity;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
