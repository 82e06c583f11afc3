use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;

use super::scheme::{pattern_taps, style_of_taps, Scheme, PATTERN_STYLES};
use super::LayerShape;
use crate::error::{bail, Result};
use crate::rng::{stream, Purpose};

/// Active-weight topology of one layer, tied to the scheme whose
/// granularity it respects.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    shape: LayerShape,
    scheme: Scheme,
    bits: Vec<bool>,
}

impl Mask {
    /// Builds a mask and checks the scheme's granularity invariants.
    pub fn new(shape: LayerShape, scheme: Scheme, bits: Vec<bool>) -> Result<Self> {
        let mask = Self { shape, scheme, bits };
        mask.validate()?;
        Ok(mask)
    }

    pub(crate) fn from_parts(shape: LayerShape, scheme: Scheme, bits: Vec<bool>) -> Self {
        debug_assert_eq!(bits.len(), shape.weights());
        Self { shape, scheme, bits }
    }

    pub fn empty(shape: LayerShape, scheme: Scheme) -> Self {
        Self { shape, scheme, bits: vec![false; shape.weights()] }
    }

    pub fn shape(&self) -> &LayerShape {
        &self.shape
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, i: usize) -> bool {
        self.bits[i]
    }

    pub fn nnz(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn sparsity(&self) -> f64 {
        1.0 - self.nnz() as f64 / self.bits.len() as f64
    }

    pub fn validate(&self) -> Result<()> {
        self.scheme.validate(&self.shape)?;
        if self.bits.len() != self.shape.weights() {
            bail!(Shape, "mask has {} bits for {} weights", self.bits.len(), self.shape.weights());
        }
        match self.scheme {
            Scheme::Unstructured => {}
            Scheme::Channel | Scheme::Block { .. } => {
                let mut pos = Vec::new();
                for u in 0..self.scheme.unit_count(&self.shape) {
                    unit_positions(&self.shape, self.scheme, u, &mut pos);
                    let first = self.bits[pos[0]];
                    if pos.iter().any(|&i| self.bits[i] != first) {
                        bail!(Shape, "{} unit {} is partially active", self.scheme.name(), u);
                    }
                }
            }
            Scheme::Pattern => {
                let mut per_filter = None;
                for f in 0..self.shape.filters {
                    let mut active = 0;
                    for c in 0..self.shape.channels {
                        let k = self.kernel_bits(f, c);
                        if k.iter().any(|&b| b) {
                            if style_of_taps(k).is_none() {
                                bail!(Shape, "kernel ({}, {}) matches no pattern style", f, c);
                            }
                            active += 1;
                        }
                    }
                    match per_filter {
                        None => per_filter = Some(active),
                        Some(n) if n != active => {
                            bail!(Shape, "filter {} keeps {} kernels, filter 0 keeps {}", f, active, n)
                        }
                        _ => {}
                    }
                }
            }
        }
        Ok(())
    }

    fn kernel_bits(&self, f: usize, c: usize) -> &[bool] {
        let base = f * self.shape.cols() + c * 9;
        &self.bits[base..base + 9]
    }

    /// Pattern style of kernel `(filter, channel)`, or `None` when empty.
    pub fn kernel_style(&self, f: usize, c: usize) -> Option<u8> {
        debug_assert_eq!(self.scheme, Scheme::Pattern);
        style_of_taps(self.kernel_bits(f, c))
    }

    pub fn is_unit_active(&self, unit: usize) -> bool {
        match self.scheme {
            Scheme::Unstructured => self.bits[unit],
            Scheme::Pattern => {
                let (f, c) = (unit / self.shape.channels, unit % self.shape.channels);
                self.kernel_bits(f, c).iter().any(|&b| b)
            }
            Scheme::Channel => self.bits[self.shape.taps() * unit],
            Scheme::Block { m, n } => {
                let per_row = self.shape.cols() / n;
                let (br, bc) = (unit / per_row, unit % per_row);
                self.bits[br * m * self.shape.cols() + bc * n]
            }
        }
    }

    pub fn active_units(&self) -> Vec<usize> {
        (0..self.scheme.unit_count(&self.shape)).filter(|&u| self.is_unit_active(u)).collect()
    }

    pub fn active_unit_count(&self) -> usize {
        (0..self.scheme.unit_count(&self.shape)).filter(|&u| self.is_unit_active(u)).count()
    }

    /// Flat weight positions that are active inside `unit`.
    pub fn active_positions(&self, unit: usize, out: &mut Vec<usize>) {
        unit_positions(&self.shape, self.scheme, unit, out);
        out.retain(|&i| self.bits[i]);
    }

    pub(crate) fn set_unit(&mut self, unit: usize, on: bool, style: u8) {
        let mut pos = Vec::new();
        match self.scheme {
            Scheme::Pattern => {
                let base = unit * 9;
                for t in 0..9 {
                    self.bits[base + t] = false;
                }
                if on {
                    for t in pattern_taps(style) {
                        self.bits[base + t] = true;
                    }
                }
            }
            _ => {
                unit_positions(&self.shape, self.scheme, unit, &mut pos);
                for i in pos {
                    self.bits[i] = on;
                }
            }
        }
    }
}

/// All flat positions (row-major GEMM order) covered by a unit. For the
/// pattern scheme a unit is a whole 3x3 kernel.
pub(crate) fn unit_positions(shape: &LayerShape, scheme: Scheme, unit: usize, out: &mut Vec<usize>) {
    out.clear();
    let cols = shape.cols();
    match scheme {
        Scheme::Unstructured => out.push(unit),
        Scheme::Channel => {
            let taps = shape.taps();
            for f in 0..shape.filters {
                let base = f * cols + unit * taps;
                out.extend(base..base + taps);
            }
        }
        Scheme::Block { m, n } => {
            let per_row = cols / n;
            let (br, bc) = (unit / per_row, unit % per_row);
            for r in br * m..(br + 1) * m {
                let base = r * cols + bc * n;
                out.extend(base..base + n);
            }
        }
        Scheme::Pattern => {
            // kernel (f, c) is contiguous in the GEMM row
            let base = unit * 9;
            out.extend(base..base + 9);
        }
    }
}

/// Random mask at sparsity `s` drawn from the `Mask` stream of `seed`.
pub fn random_mask(shape: LayerShape, scheme: Scheme, s: f64, seed: u64) -> Result<Mask> {
    random_mask_with(shape, scheme, s, &mut stream(seed, Purpose::Mask, 0, 0))
}

/// Random mask with uniformly placed units. Pattern masks keep the same
/// number of kernels in every filter, each with a uniformly drawn style.
pub fn random_mask_with<R: Rng + ?Sized>(
    shape: LayerShape,
    scheme: Scheme,
    s: f64,
    rng: &mut R,
) -> Result<Mask> {
    let kept = scheme.kept_units(&shape, s)?;
    let mut mask = Mask::empty(shape, scheme);
    match scheme {
        Scheme::Pattern => {
            let per_filter = kept / shape.filters;
            let mut chans: Vec<usize> = (0..shape.channels).collect();
            for f in 0..shape.filters {
                let (chosen, _) = chans.partial_shuffle(rng, per_filter);
                let mut chosen = chosen.to_vec();
                chosen.sort_unstable();
                for c in chosen {
                    let style = rng.random_range(0..PATTERN_STYLES as u8);
                    mask.set_unit(f * shape.channels + c, true, style);
                }
            }
        }
        _ => {
            let mut units: Vec<usize> = (0..scheme.unit_count(&shape)).collect();
            let (chosen, _) = units.partial_shuffle(rng, kept);
            for &u in chosen.iter() {
                mask.set_unit(u, true, 0);
            }
        }
    }
    debug_assert!(mask.validate().is_ok());
    Ok(mask)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_sparsity_sets_every_bit() {
        let m = random_mask(LayerShape::new(4, 3, 3), Scheme::Unstructured, 0.0, 1).unwrap();
        assert_eq!(m.nnz(), 108);
    }

    #[test]
    fn rounding_rule_fixes_nonzero_count() {
        let m = random_mask(LayerShape::fc(100, 10), Scheme::Unstructured, 0.9, 3).unwrap();
        assert_eq!(m.nnz(), 100);
    }

    #[test]
    fn pattern_half_sparsity_is_rejected() {
        let err = random_mask(LayerShape::new(4, 4, 3), Scheme::Pattern, 0.5, 0).unwrap_err();
        assert!(matches!(err, crate::Error::Feasibility(_)));
    }

    #[test]
    fn structured_masks_respect_granularity() {
        for (scheme, s) in [
            (Scheme::Channel, 0.5),
            (Scheme::Block { m: 4, n: 1 }, 0.8),
            (Scheme::Block { m: 2, n: 3 }, 0.3),
            (Scheme::Pattern, 0.8),
        ] {
            for seed in 0..20 {
                let m = random_mask(LayerShape::new(8, 6, 3), scheme, s, seed).unwrap();
                m.validate().unwrap();
                assert_eq!(m.nnz(), scheme.nnz_for(m.shape(), s).unwrap());
            }
        }
    }

    #[test]
    fn partial_units_are_rejected() {
        let shape = LayerShape::fc(4, 4);
        let mut bits = vec![false; 16];
        bits[0] = true;
        assert!(Mask::new(shape, Scheme::Block { m: 2, n: 1 }, bits.clone()).is_err());
        assert!(Mask::new(shape, Scheme::Channel, bits.clone()).is_err());
        assert!(Mask::new(shape, Scheme::Unstructured, bits).is_ok());
    }

    #[test]
    fn unbalanced_pattern_filters_are_rejected() {
        let shape = LayerShape::new(2, 2, 3);
        let mut mask = Mask::empty(shape, Scheme::Pattern);
        mask.set_unit(0, true, 1);
        assert!(mask.validate().is_err());
        mask.set_unit(3, true, 5);
        mask.validate().unwrap();
        assert_eq!(mask.kernel_style(0, 0), Some(1));
        assert_eq!(mask.kernel_style(1, 1), Some(5));
        assert_eq!(mask.kernel_style(0, 1), None);
    }
}
