//! Compute kernels: convolution lowering, dense and compressed GEMM with
//! their backward passes, row reordering and parameter search.

mod im2col;
mod spmm;
mod tune;

pub use im2col::{col2im, flatten_cols, im2col, unflatten_cols, ConvGeom};
pub use spmm::{
    gemm, gemm_backward, matrix_reorder, output_rows_per_stored, spmm, spmm_backward,
    spmm_backward_reordered, spmm_reordered, spmm_rows, unpermute_rows, GemmGrads, KernelConfig,
};
pub use tune::{autotune, median, tuning_grid, Trial, TuneResult};
