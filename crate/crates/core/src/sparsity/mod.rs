//! Weight-sparsity schemes, masks, compressed storage and memory accounting.
//!
//! A layer's weights are viewed as a GEMM matrix with one row per filter
//! (output channel) and `channels * kernel^2` columns. Fully connected layers
//! use the same view with `kernel = 1`.

mod assign;
mod compressed;
mod footprint;
mod mask;
mod scheme;

pub use assign::{assign_layer_sparsity, LayerSlot, RatioStrategy};
pub use compressed::CompressedLayer;
pub(crate) use compressed::unpack_kernel;
pub use footprint::{
    footprint_bits, layer_footprint, model_footprint, Accounting, BitWidths, FootprintMode,
    FootprintReport, LayerFootprint,
};
pub use mask::{random_mask, random_mask_with, Mask};
pub use scheme::{pattern_taps, round_half_up, style_of_taps, Scheme, PATTERN_STYLES};

use serde::{Deserialize, Serialize};

/// Weight geometry of a conv (`filters x channels x kernel x kernel`) or fc
/// (`outputs x inputs`, `kernel = 1`) layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LayerShape {
    pub filters: usize,
    pub channels: usize,
    pub kernel: usize,
}

impl LayerShape {
    pub const fn new(filters: usize, channels: usize, kernel: usize) -> Self {
        Self { filters, channels, kernel }
    }

    pub const fn fc(inputs: usize, outputs: usize) -> Self {
        Self { filters: outputs, channels: inputs, kernel: 1 }
    }

    /// Weight count `N = F * Ch * K^2`.
    pub const fn weights(&self) -> usize {
        self.filters * self.channels * self.kernel * self.kernel
    }

    pub const fn rows(&self) -> usize {
        self.filters
    }

    /// GEMM columns, `Ch * K^2`.
    pub const fn cols(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    pub const fn taps(&self) -> usize {
        self.kernel * self.kernel
    }
}
