use serde::{Deserialize, Serialize};

use super::LayerShape;
use crate::error::{bail, Result};

/// Number of registered 4-entry kernel pattern styles.
pub const PATTERN_STYLES: usize = 8;

/// Border cells of a 3x3 kernel, clockwise from the top-left corner, as
/// flat `row * 3 + col` tap indices.
const RING: [usize; 8] = [0, 1, 2, 5, 8, 7, 6, 3];
const CENTER: usize = 4;

/// Taps of pattern style `k`: the center plus three consecutive ring cells
/// starting at `RING[k]`, sorted ascending.
pub fn pattern_taps(style: u8) -> [usize; 4] {
    let k = style as usize % PATTERN_STYLES;
    let mut taps = [CENTER, RING[k], RING[(k + 1) % 8], RING[(k + 2) % 8]];
    taps.sort_unstable();
    taps
}

/// Style whose taps are exactly the set bits of a 3x3 kernel, if any.
pub fn style_of_taps(kernel: &[bool]) -> Option<u8> {
    debug_assert_eq!(kernel.len(), 9);
    (0..PATTERN_STYLES as u8).find(|&s| {
        let taps = pattern_taps(s);
        (0..9).all(|t| kernel[t] == taps.contains(&t))
    })
}

/// Deterministic rounding used for every kept-unit count. The epsilon
/// absorbs representation error such as `(1 - 0.9) * 1000 = 99.999...`.
pub fn round_half_up(x: f64) -> usize {
    libm::floor(x + 0.5 + 1e-9).max(0.0) as usize
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Zeros anywhere.
    Unstructured,
    /// Whole input channels removed.
    Channel,
    /// `m x n` tiles of the GEMM matrix (m rows/filters, n columns).
    Block { m: usize, n: usize },
    /// 4-entry kernel patterns plus whole-kernel connectivity pruning,
    /// 3x3 conv layers only.
    Pattern,
}

impl Scheme {
    pub const DEFAULT_BLOCK: Scheme = Scheme::Block { m: 4, n: 1 };

    pub fn name(&self) -> &'static str {
        match self {
            Scheme::Unstructured => "unstructured",
            Scheme::Channel => "channel",
            Scheme::Block { .. } => "block",
            Scheme::Pattern => "pattern",
        }
    }

    pub fn validate(&self, shape: &LayerShape) -> Result<()> {
        if shape.weights() == 0 {
            bail!(Shape, "layer {:?} has no weights", shape);
        }
        match *self {
            Scheme::Block { m, n } => {
                if m == 0 || n == 0 {
                    bail!(Config, "block size must be at least 1x1, got {}x{}", m, n);
                }
                if !shape.rows().is_multiple_of(m) || !shape.cols().is_multiple_of(n) {
                    bail!(
                        Config,
                        "block {}x{} does not tile a {}x{} weight matrix",
                        m,
                        n,
                        shape.rows(),
                        shape.cols()
                    );
                }
            }
            Scheme::Pattern if shape.kernel != 3 => {
                bail!(Config, "pattern sparsity needs 3x3 kernels, layer has {}x{}", shape.kernel, shape.kernel)
            }
            _ => {}
        }
        Ok(())
    }

    /// Smallest reachable sparsity: every kept 3x3 pattern kernel already
    /// drops 5 of 9 weights.
    pub fn min_sparsity(&self) -> f64 {
        match self {
            Scheme::Pattern => 5.0 / 9.0,
            _ => 0.0,
        }
    }

    /// Number of selectable units in a layer.
    pub fn unit_count(&self, shape: &LayerShape) -> usize {
        match *self {
            Scheme::Unstructured => shape.weights(),
            Scheme::Channel => shape.channels,
            Scheme::Block { m, n } => (shape.rows() / m) * (shape.cols() / n),
            Scheme::Pattern => shape.filters * shape.channels,
        }
    }

    /// Weights per active unit.
    pub fn unit_size(&self, shape: &LayerShape) -> usize {
        match *self {
            Scheme::Unstructured => 1,
            Scheme::Channel => shape.filters * shape.taps(),
            Scheme::Block { m, n } => m * n,
            Scheme::Pattern => 4,
        }
    }

    pub fn check_sparsity(&self, s: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&s) {
            bail!(Feasibility, "sparsity {} outside [0, 1]", s);
        }
        if s + 1e-12 < self.min_sparsity() {
            bail!(
                Feasibility,
                "{} sparsity must be at least {:.4}, requested {}",
                self.name(),
                self.min_sparsity(),
                s
            );
        }
        Ok(())
    }

    /// Kept kernels per filter for the pattern scheme: the kept-kernel
    /// fraction is `9 (1 - s) / 4`.
    pub fn pattern_kernels_per_filter(shape: &LayerShape, s: f64) -> usize {
        round_half_up(9.0 * (1.0 - s) / 4.0 * shape.channels as f64).min(shape.channels)
    }

    /// Kept units at sparsity `s`, rounded half-up at the scheme granularity.
    pub fn kept_units(&self, shape: &LayerShape, s: f64) -> Result<usize> {
        self.validate(shape)?;
        self.check_sparsity(s)?;
        Ok(match self {
            Scheme::Pattern => Self::pattern_kernels_per_filter(shape, s) * shape.filters,
            _ => {
                let units = self.unit_count(shape);
                round_half_up((1.0 - s) * units as f64).min(units)
            }
        })
    }

    /// Nonzero weights at sparsity `s`.
    pub fn nnz_for(&self, shape: &LayerShape, s: f64) -> Result<usize> {
        Ok(self.kept_units(shape, s)? * self.unit_size(shape))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn styles_are_distinct_four_entry_and_centered() {
        let mut seen = std::vec::Vec::new();
        for s in 0..8u8 {
            let taps = pattern_taps(s);
            assert!(taps.contains(&CENTER));
            assert!(taps.windows(2).all(|w| w[0] < w[1]));
            let mut bits = [false; 9];
            for t in taps {
                bits[t] = true;
            }
            assert_eq!(style_of_taps(&bits), Some(s));
            assert!(!seen.contains(&taps));
            seen.push(taps);
        }
        assert_eq!(pattern_taps(0), [0, 1, 2, 4]);
        assert_eq!(style_of_taps(&[true; 9]), None);
    }

    #[test]
    fn rounding_is_half_up() {
        assert_eq!(round_half_up((1.0 - 0.9) * 1000.0), 100);
        assert_eq!(round_half_up((1.0 - 0.95) * 1000.0), 50);
        assert_eq!(round_half_up(4.5), 5);
        assert_eq!(round_half_up(4.49), 4);
    }

    #[test]
    fn kept_units_per_scheme() {
        let conv = LayerShape::new(8, 4, 3);
        assert_eq!(Scheme::Unstructured.nnz_for(&conv, 0.9).unwrap(), 29); // 28.8
        assert_eq!(Scheme::Channel.kept_units(&conv, 0.5).unwrap(), 2);
        assert_eq!(Scheme::Block { m: 4, n: 1 }.unit_count(&conv), 2 * 36);
        // 9 * 0.25 / 4 * 4 channels = 2.25 kernels per filter -> 2
        assert_eq!(Scheme::Pattern.kept_units(&conv, 0.75).unwrap(), 16);
        assert_eq!(Scheme::Pattern.nnz_for(&conv, 5.0 / 9.0).unwrap(), conv.filters * conv.channels * 4);
    }

    #[test]
    fn pattern_below_five_ninths_is_infeasible() {
        let conv = LayerShape::new(4, 4, 3);
        assert!(matches!(
            Scheme::Pattern.kept_units(&conv, 0.5),
            Err(crate::Error::Feasibility(_))
        ));
    }

    #[test]
    fn scheme_geometry_is_validated() {
        assert!(Scheme::Pattern.validate(&LayerShape::new(4, 4, 1)).is_err());
        assert!(Scheme::Block { m: 4, n: 1 }.validate(&LayerShape::fc(16, 10)).is_err());
        assert!(Scheme::Block { m: 0, n: 1 }.validate(&LayerShape::fc(16, 8)).is_err());
        assert!(Scheme::Block { m: 2, n: 4 }.validate(&LayerShape::fc(16, 8)).is_ok());
    }
}
