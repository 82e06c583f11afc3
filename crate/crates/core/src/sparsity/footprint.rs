//! Memory footprint of sparse training: weights plus gradients plus the
//! index arrays that locate them.
//!
//! `Exact` accounting counts the `row_index` arrays and rounds kept weights
//! at the scheme granularity, so it equals the size of what
//! [`CompressedLayer`](super::CompressedLayer) stores (plus one gradient per
//! stored weight). `Approx` is the closed form without `row_index` terms.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::scheme::Scheme;
use super::LayerShape;
use crate::error::{bail, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BitWidths {
    /// Bits per weight and per gradient (`b_w`).
    pub weight: u32,
    /// Bits per index (`b_index`).
    pub index: u32,
}

impl Default for BitWidths {
    fn default() -> Self {
        Self { weight: 32, index: 8 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FootprintMode {
    Dense,
    Structured,
    Unstructured,
    Pattern,
    Block { m: usize, n: usize },
    /// SNIP / GraSP style: dense iterations before pruning.
    DensePruningAtInit,
    /// SNFS / RigL style: sparse weights, dense gradients.
    DenseGradientSparseWeight,
}

impl FootprintMode {
    pub fn for_scheme(scheme: Scheme) -> Self {
        match scheme {
            Scheme::Unstructured => FootprintMode::Unstructured,
            Scheme::Channel => FootprintMode::Structured,
            Scheme::Block { m, n } => FootprintMode::Block { m, n },
            Scheme::Pattern => FootprintMode::Pattern,
        }
    }

    /// The seven rows of the comparison table, with the given block size.
    pub fn all(block: (usize, usize)) -> [FootprintMode; 7] {
        [
            FootprintMode::Dense,
            FootprintMode::Structured,
            FootprintMode::Unstructured,
            FootprintMode::Pattern,
            FootprintMode::Block { m: block.0, n: block.1 },
            FootprintMode::DensePruningAtInit,
            FootprintMode::DenseGradientSparseWeight,
        ]
    }

    pub fn name(&self) -> &'static str {
        match self {
            FootprintMode::Dense => "dense",
            FootprintMode::Structured => "structured",
            FootprintMode::Unstructured => "unstructured",
            FootprintMode::Pattern => "pattern",
            FootprintMode::Block { .. } => "block",
            FootprintMode::DensePruningAtInit => "dense-pruning-at-init",
            FootprintMode::DenseGradientSparseWeight => "dense-gradient-sparse-weight",
        }
    }

    /// Scheme governing kept-weight rounding, if any.
    fn scheme(&self) -> Option<Scheme> {
        match *self {
            FootprintMode::Structured => Some(Scheme::Channel),
            FootprintMode::Unstructured | FootprintMode::DenseGradientSparseWeight => {
                Some(Scheme::Unstructured)
            }
            FootprintMode::Pattern => Some(Scheme::Pattern),
            FootprintMode::Block { m, n } => Some(Scheme::Block { m, n }),
            FootprintMode::Dense | FootprintMode::DensePruningAtInit => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Accounting {
    Exact,
    Approx,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LayerFootprint {
    pub weights: f64,
    pub gradients: f64,
    pub indices: f64,
}

impl LayerFootprint {
    pub fn total(&self) -> f64 {
        self.weights + self.gradients + self.indices
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FootprintReport {
    pub mode: FootprintMode,
    pub accounting: Accounting,
    pub widths: BitWidths,
    pub layers: Vec<LayerFootprint>,
    pub weights: f64,
    pub gradients: f64,
    pub indices: f64,
    pub total: f64,
}

impl FootprintReport {
    fn from_layers(
        mode: FootprintMode,
        accounting: Accounting,
        widths: BitWidths,
        layers: Vec<LayerFootprint>,
    ) -> Self {
        let weights = layers.iter().map(|l| l.weights).sum();
        let gradients = layers.iter().map(|l| l.gradients).sum();
        let indices = layers.iter().map(|l| l.indices).sum();
        Self {
            mode,
            accounting,
            widths,
            layers,
            weights,
            gradients,
            indices,
            total: weights + gradients + indices,
        }
    }

    /// Extra bits for one momentum buffer sharing the weights' topology.
    pub fn momentum_bits(&self) -> f64 {
        self.weights
    }
}

/// Footprint of one layer holding `kept` nonzero weights.
pub fn layer_footprint(
    shape: &LayerShape,
    mode: FootprintMode,
    kept: usize,
    widths: BitWidths,
) -> LayerFootprint {
    let n = shape.weights() as f64;
    let k = kept as f64;
    let (bw, bi) = (widths.weight as f64, widths.index as f64);
    let rows = shape.rows() as f64;
    match mode {
        FootprintMode::Dense | FootprintMode::DensePruningAtInit => {
            LayerFootprint { weights: n * bw, gradients: n * bw, indices: 0.0 }
        }
        FootprintMode::Structured => LayerFootprint { weights: k * bw, gradients: k * bw, indices: 0.0 },
        FootprintMode::Unstructured => LayerFootprint {
            weights: k * bw,
            gradients: k * bw,
            indices: (k + rows + 1.0) * bi,
        },
        FootprintMode::Pattern => LayerFootprint {
            weights: k * bw,
            gradients: k * bw,
            indices: (k / 4.0 + rows + 1.0) * bi,
        },
        FootprintMode::Block { m, n: bn } => LayerFootprint {
            weights: k * bw,
            gradients: k * bw,
            indices: (k / (m * bn) as f64 + (shape.rows() / m) as f64 + 1.0) * bi,
        },
        FootprintMode::DenseGradientSparseWeight => {
            LayerFootprint { weights: k * bw, gradients: n * bw, indices: k * bi }
        }
    }
}

fn approx_layer(shape: &LayerShape, mode: FootprintMode, s: f64, widths: BitWidths) -> LayerFootprint {
    let n = shape.weights() as f64;
    let d = 1.0 - s;
    let (bw, bi) = (widths.weight as f64, widths.index as f64);
    match mode {
        FootprintMode::Dense | FootprintMode::DensePruningAtInit => {
            LayerFootprint { weights: n * bw, gradients: n * bw, indices: 0.0 }
        }
        FootprintMode::Structured => LayerFootprint { weights: d * n * bw, gradients: d * n * bw, indices: 0.0 },
        FootprintMode::Unstructured => {
            LayerFootprint { weights: d * n * bw, gradients: d * n * bw, indices: d * n * bi }
        }
        FootprintMode::Pattern => {
            LayerFootprint { weights: d * n * bw, gradients: d * n * bw, indices: d * n * bi / 4.0 }
        }
        FootprintMode::Block { m, n: bn } => LayerFootprint {
            weights: d * n * bw,
            gradients: d * n * bw,
            indices: d * n * bi / (m * bn) as f64,
        },
        FootprintMode::DenseGradientSparseWeight => {
            LayerFootprint { weights: d * n * bw, gradients: n * bw, indices: d * n * bi }
        }
    }
}

/// Footprint of `layers` sparsified uniformly to `s` under one mode.
pub fn footprint_bits(
    layers: &[LayerShape],
    mode: FootprintMode,
    s: f64,
    widths: BitWidths,
    accounting: Accounting,
) -> Result<FootprintReport> {
    if !(0.0..1.0).contains(&s) {
        bail!(Feasibility, "sparsity {} outside [0, 1)", s);
    }
    if widths.weight == 0 || widths.index == 0 {
        bail!(Config, "bit widths must be positive");
    }
    let mut out = Vec::with_capacity(layers.len());
    for shape in layers {
        out.push(match accounting {
            Accounting::Approx => approx_layer(shape, mode, s, widths),
            Accounting::Exact => {
                let kept = match mode.scheme() {
                    Some(scheme) => scheme.nnz_for(shape, s)?,
                    None => shape.weights(),
                };
                layer_footprint(shape, mode, kept, widths)
            }
        });
    }
    Ok(FootprintReport::from_layers(mode, accounting, widths, out))
}

/// Exact footprint of a model whose layers carry their own scheme (or are
/// dense, `None`) and their actual kept-weight counts.
pub fn model_footprint(
    layers: &[(LayerShape, Option<Scheme>, usize)],
    widths: BitWidths,
) -> FootprintReport {
    let out = layers
        .iter()
        .map(|(shape, scheme, kept)| match scheme {
            Some(s) => layer_footprint(shape, FootprintMode::for_scheme(*s), *kept, widths),
            None => layer_footprint(shape, FootprintMode::Dense, shape.weights(), widths),
        })
        .collect();
    FootprintReport::from_layers(FootprintMode::Dense, Accounting::Exact, widths, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const W: BitWidths = BitWidths { weight: 32, index: 8 };

    #[test]
    fn dense_hundred_weights() {
        let r = footprint_bits(&[LayerShape::fc(10, 10)], FootprintMode::Dense, 0.0, W, Accounting::Exact)
            .unwrap();
        assert_eq!(r.total, 6400.0);
    }

    #[test]
    fn unstructured_hand_evaluation() {
        // N = 36, F = 4, s = 0.75: 0.25 * (2304 + 288) + 5 * 8
        let r = footprint_bits(
            &[LayerShape::new(4, 1, 3)],
            FootprintMode::Unstructured,
            0.75,
            W,
            Accounting::Exact,
        )
        .unwrap();
        assert_eq!(r.total, 688.0);
        assert_eq!(r.indices, 112.0);
    }

    #[test]
    fn structured_half() {
        let r = footprint_bits(&[LayerShape::new(10, 10, 1)], FootprintMode::Structured, 0.5, W, Accounting::Exact)
            .unwrap();
        assert_eq!(r.total, 3200.0);
    }

    #[test]
    fn comparison_modes() {
        let layers = [LayerShape::fc(50, 20)];
        let dpi = footprint_bits(&layers, FootprintMode::DensePruningAtInit, 0.9, W, Accounting::Exact).unwrap();
        assert_eq!(dpi.total, 2.0 * 1000.0 * 32.0);
        let dgsw =
            footprint_bits(&layers, FootprintMode::DenseGradientSparseWeight, 0.9, W, Accounting::Approx).unwrap();
        assert!((dgsw.total - (1.1 * 1000.0 * 32.0 + 0.1 * 1000.0 * 8.0)).abs() < 1e-6);
    }

    #[test]
    fn approx_drops_row_index() {
        let layers = [LayerShape::new(16, 8, 3)];
        let mode = FootprintMode::Block { m: 4, n: 1 };
        let exact = footprint_bits(&layers, mode, 0.75, W, Accounting::Exact).unwrap();
        let approx = footprint_bits(&layers, mode, 0.75, W, Accounting::Approx).unwrap();
        assert_eq!(exact.total - approx.total, (16.0 / 4.0 + 1.0) * 8.0);
    }

    #[test]
    fn totals_are_sums_of_parts() {
        let layers = [LayerShape::new(8, 4, 3), LayerShape::fc(64, 16)];
        for mode in FootprintMode::all((4, 1)) {
            let s = if mode == FootprintMode::Pattern { 0.8 } else { 0.6 };
            let shapes: &[LayerShape] = if mode == FootprintMode::Pattern { &layers[..1] } else { &layers };
            let r = footprint_bits(shapes, mode, s, W, Accounting::Exact).unwrap();
            assert_eq!(r.total, r.weights + r.gradients + r.indices);
            let layer_sum: f64 = r.layers.iter().map(|l| l.total()).sum();
            assert_eq!(r.total, layer_sum);
            assert!(r.layers.iter().all(|l| l.weights >= 0.0 && l.indices >= 0.0));
        }
    }
}
