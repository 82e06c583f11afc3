//! Layers, a direct-loop reference implementation, the kernel-backed model
//! and its finite-difference check.

mod gradcheck;
mod layer;
mod model;
pub mod reference;

pub use gradcheck::{fd_check, fd_check_against, rel_error, FdReport};
pub use layer::{Activation, FeatureShape, LayerSpec};
pub use model::{ForwardCache, Gradients, Model, Param, StepOutput, WeightStore};
