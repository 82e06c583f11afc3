//! Scheme-specific compressed storage.
//!
//! | scheme       | row_index            | indices                         | values            |
//! |--------------|----------------------|---------------------------------|-------------------|
//! | unstructured | `F + 1` (CSR)        | column per nonzero              | one per nonzero   |
//! | pattern      | `F + 1` kernel counts| `channel * 8 + style` per kernel| 4 per kernel      |
//! | block m x n  | `F / m + 1`          | block column per block          | `m * n` per block |
//! | channel      | none                 | none                            | `F x kept*K^2`    |
//!
//! Channel storage is a smaller dense matrix; the list of kept channels is
//! topology metadata, not per-weight index data.
//!
//! On-disk layout (little-endian): `tag u8, b_w u8, b_index u8,
//! dims u32 x 4 (F, Ch, K, K), nnz u32`, then scheme parameters (block:
//! `m u32, n u32`; channel: kept-channel bitmap of `ceil(Ch / 8)` bytes),
//! then `row_index`, indices and values at their declared widths.

use alloc::vec;
use alloc::vec::Vec;

use super::mask::Mask;
use super::scheme::{pattern_taps, Scheme, PATTERN_STYLES};
use super::LayerShape;
use crate::error::{bail, Result};
use crate::tensor::Tensor;

const HEADER_BYTES: usize = 3 + 4 * 4 + 4;

#[derive(Clone, Debug, PartialEq)]
pub struct CompressedLayer {
    shape: LayerShape,
    scheme: Scheme,
    value_bits: u8,
    index_bits: u8,
    row_index: Vec<u32>,
    indices: Vec<u32>,
    channels: Vec<u32>,
    values: Vec<f64>,
}

fn check_widths(b_w: u8, b_index: u8) -> Result<()> {
    if !matches!(b_w, 32 | 64) {
        bail!(Encoding, "value width must be 32 or 64 bits, got {}", b_w);
    }
    if !matches!(b_index, 8 | 16 | 32) {
        bail!(Encoding, "index width must be 8, 16 or 32 bits, got {}", b_index);
    }
    Ok(())
}

fn store_value(v: f64, b_w: u8) -> f64 {
    if b_w == 32 {
        v as f32 as f64
    } else {
        v
    }
}

impl CompressedLayer {
    /// Compresses the active weights of `mask`. Values at inactive
    /// positions are ignored; 32-bit value storage rounds to `f32`.
    pub fn encode(weights: &[f64], mask: &Mask, b_w: u8, b_index: u8) -> Result<Self> {
        check_widths(b_w, b_index)?;
        mask.validate()?;
        let shape = *mask.shape();
        if weights.len() != shape.weights() {
            bail!(Shape, "{} weights for a {:?} mask", weights.len(), shape);
        }
        let cols = shape.cols();
        let bits = mask.bits();
        let mut layer = Self {
            shape,
            scheme: mask.scheme(),
            value_bits: b_w,
            index_bits: b_index,
            row_index: Vec::new(),
            indices: Vec::new(),
            channels: Vec::new(),
            values: Vec::with_capacity(mask.nnz()),
        };
        match mask.scheme() {
            Scheme::Unstructured => {
                layer.row_index.push(0);
                for r in 0..shape.rows() {
                    for c in 0..cols {
                        let i = r * cols + c;
                        if bits[i] {
                            layer.indices.push(c as u32);
                            layer.values.push(store_value(weights[i], b_w));
                        }
                    }
                    layer.row_index.push(layer.indices.len() as u32);
                }
            }
            Scheme::Pattern => {
                layer.row_index.push(0);
                for f in 0..shape.filters {
                    for c in 0..shape.channels {
                        if let Some(style) = mask.kernel_style(f, c) {
                            layer.indices.push((c * PATTERN_STYLES + style as usize) as u32);
                            let base = f * cols + c * 9;
                            for t in pattern_taps(style) {
                                layer.values.push(store_value(weights[base + t], b_w));
                            }
                        }
                    }
                    layer.row_index.push(layer.indices.len() as u32);
                }
            }
            Scheme::Block { m, n } => {
                layer.row_index.push(0);
                for br in 0..shape.rows() / m {
                    for bc in 0..cols / n {
                        if bits[br * m * cols + bc * n] {
                            layer.indices.push(bc as u32);
                            for r in br * m..(br + 1) * m {
                                for c in bc * n..(bc + 1) * n {
                                    layer.values.push(store_value(weights[r * cols + c], b_w));
                                }
                            }
                        }
                    }
                    layer.row_index.push(layer.indices.len() as u32);
                }
            }
            Scheme::Channel => {
                let taps = shape.taps();
                layer.channels =
                    (0..shape.channels).filter(|&c| bits[c * taps]).map(|c| c as u32).collect();
                for r in 0..shape.rows() {
                    for &c in &layer.channels {
                        let base = r * cols + c as usize * taps;
                        for t in 0..taps {
                            layer.values.push(store_value(weights[base + t], b_w));
                        }
                    }
                }
            }
        }
        let limit = 1u64 << b_index;
        let widest = layer.row_index.iter().chain(&layer.indices).copied().max().unwrap_or(0);
        if widest as u64 >= limit {
            bail!(
                Encoding,
                "coordinate {} does not fit in a {}-bit index",
                widest,
                b_index
            );
        }
        Ok(layer)
    }

    /// Encodes with the narrowest index width (8, 16 or 32 bits) that fits.
    pub fn encode_fitting(weights: &[f64], mask: &Mask, b_w: u8) -> Result<Self> {
        let mut last = None;
        for b_index in [8, 16, 32] {
            match Self::encode(weights, mask, b_w, b_index) {
                Err(e @ crate::Error::Encoding(_)) => last = Some(e),
                other => return other,
            }
        }
        Err(last.expect("at least one width attempted"))
    }

    /// Reconstructs the dense weights (`[F, Ch, K, K]`, zeros outside the
    /// mask) and the mask.
    pub fn decode(&self) -> (Tensor, Mask) {
        let shape = self.shape;
        let mut dense = vec![0.0; shape.weights()];
        let mut bits = vec![false; shape.weights()];
        self.for_each_position(|slot, pos| {
            dense[pos] = self.values[slot];
            bits[pos] = true;
        });
        let tensor = Tensor::new(
            vec![shape.filters, shape.channels, shape.kernel, shape.kernel],
            dense,
        )
        .expect("shape matches");
        (tensor, Mask::from_parts(shape, self.scheme, bits))
    }

    /// Scatters a value array that shares this layer's topology (e.g. a
    /// compressed gradient) into a dense buffer.
    pub fn scatter(&self, values: &[f64], dense: &mut [f64]) {
        debug_assert_eq!(values.len(), self.values.len());
        dense.iter_mut().for_each(|v| *v = 0.0);
        self.for_each_position(|slot, pos| dense[pos] = values[slot]);
    }

    /// Gathers dense values at this layer's active positions, in storage order.
    pub fn gather(&self, dense: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.values.len()];
        self.for_each_position(|slot, pos| out[slot] = dense[pos]);
        out
    }

    /// Visits `(value slot, flat dense position)` in storage order.
    pub fn for_each_position(&self, mut f: impl FnMut(usize, usize)) {
        let shape = self.shape;
        let cols = shape.cols();
        let mut slot = 0;
        match self.scheme {
            Scheme::Unstructured => {
                for r in 0..shape.rows() {
                    for j in self.row_index[r] as usize..self.row_index[r + 1] as usize {
                        f(slot, r * cols + self.indices[j] as usize);
                        slot += 1;
                    }
                }
            }
            Scheme::Pattern => {
                for r in 0..shape.rows() {
                    for j in self.row_index[r] as usize..self.row_index[r + 1] as usize {
                        let (c, style) = unpack_kernel(self.indices[j]);
                        let base = r * cols + c * 9;
                        for t in pattern_taps(style) {
                            f(slot, base + t);
                            slot += 1;
                        }
                    }
                }
            }
            Scheme::Block { m, n } => {
                for br in 0..self.row_index.len() - 1 {
                    for j in self.row_index[br] as usize..self.row_index[br + 1] as usize {
                        let bc = self.indices[j] as usize;
                        for r in br * m..(br + 1) * m {
                            for c in bc * n..(bc + 1) * n {
                                f(slot, r * cols + c);
                                slot += 1;
                            }
                        }
                    }
                }
            }
            Scheme::Channel => {
                let taps = shape.taps();
                for r in 0..shape.rows() {
                    for &c in &self.channels {
                        let base = r * cols + c as usize * taps;
                        for t in 0..taps {
                            f(slot, base + t);
                            slot += 1;
                        }
                    }
                }
            }
        }
    }

    pub fn shape(&self) -> &LayerShape {
        &self.shape
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn value_bits(&self) -> u8 {
        self.value_bits
    }

    pub fn index_bits(&self) -> u8 {
        self.index_bits
    }

    pub fn row_index(&self) -> &[u32] {
        &self.row_index
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    /// Kept input channels (channel scheme only).
    pub fn channels(&self) -> &[u32] {
        &self.channels
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn sparsity(&self) -> f64 {
        1.0 - self.nnz() as f64 / self.shape.weights() as f64
    }

    /// Bits of value and index arrays, i.e. what the memory model charges
    /// for the weights of this layer.
    pub fn payload_bits(&self) -> u64 {
        (self.row_index.len() + self.indices.len()) as u64 * self.index_bits as u64
            + self.values.len() as u64 * self.value_bits as u64
    }

    /// Bytes of header plus scheme parameters preceding the payload.
    pub fn metadata_bytes(&self) -> usize {
        HEADER_BYTES
            + match self.scheme {
                Scheme::Block { .. } => 8,
                Scheme::Channel => self.shape.channels.div_ceil(8),
                _ => 0,
            }
    }

    /// Permutes rows (filters, or block rows) so that stored row `i` is
    /// original row `order[i]`.
    pub(crate) fn permute_rows(&self, order: &[usize]) -> Self {
        let mut out = self.clone();
        let per_row_values = |r: usize| -> core::ops::Range<usize> {
            let lo = self.row_index[r] as usize * self.values_per_index();
            let hi = self.row_index[r + 1] as usize * self.values_per_index();
            lo..hi
        };
        match self.scheme {
            Scheme::Channel => {
                let width = self.channels.len() * self.shape.taps();
                out.values.clear();
                for &r in order {
                    out.values.extend_from_slice(&self.values[r * width..(r + 1) * width]);
                }
            }
            _ => {
                out.row_index.clear();
                out.indices.clear();
                out.values.clear();
                out.row_index.push(0);
                for &r in order {
                    let (lo, hi) = (self.row_index[r] as usize, self.row_index[r + 1] as usize);
                    out.indices.extend_from_slice(&self.indices[lo..hi]);
                    out.values.extend_from_slice(&self.values[per_row_values(r)]);
                    out.row_index.push(out.indices.len() as u32);
                }
            }
        }
        out
    }

    /// Values stored per index entry.
    pub(crate) fn values_per_index(&self) -> usize {
        match self.scheme {
            Scheme::Unstructured => 1,
            Scheme::Pattern => 4,
            Scheme::Block { m, n } => m * n,
            Scheme::Channel => self.shape.filters * self.shape.taps(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.metadata_bytes() + self.payload_bits() as usize / 8);
        let (tag, params): (u8, Vec<u8>) = match self.scheme {
            Scheme::Unstructured => (0, Vec::new()),
            Scheme::Channel => {
                let mut bitmap = vec![0u8; self.shape.channels.div_ceil(8)];
                for &c in &self.channels {
                    bitmap[c as usize / 8] |= 1 << (c % 8);
                }
                (1, bitmap)
            }
            Scheme::Block { m, n } => {
                let mut p = Vec::new();
                p.extend_from_slice(&(m as u32).to_le_bytes());
                p.extend_from_slice(&(n as u32).to_le_bytes());
                (2, p)
            }
            Scheme::Pattern => (3, Vec::new()),
        };
        out.extend_from_slice(&[tag, self.value_bits, self.index_bits]);
        for d in [self.shape.filters, self.shape.channels, self.shape.kernel, self.shape.kernel] {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.extend_from_slice(&(self.nnz() as u32).to_le_bytes());
        out.extend_from_slice(&params);
        for &i in self.row_index.iter().chain(&self.indices) {
            match self.index_bits {
                8 => out.push(i as u8),
                16 => out.extend_from_slice(&(i as u16).to_le_bytes()),
                _ => out.extend_from_slice(&i.to_le_bytes()),
            }
        }
        for &v in &self.values {
            if self.value_bits == 32 {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            } else {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    /// Parses one layer from the front of `bytes`, returning it with the
    /// number of bytes consumed.
    pub fn from_bytes(bytes: &[u8]) -> Result<(Self, usize)> {
        let mut rd = Reader { bytes, pos: 0 };
        let tag = rd.u8()?;
        let b_w = rd.u8()?;
        let b_index = rd.u8()?;
        check_widths(b_w, b_index).map_err(|e| crate::Error::Format(alloc::format!("{e}")))?;
        let filters = rd.u32()? as usize;
        let channels = rd.u32()? as usize;
        let kh = rd.u32()? as usize;
        let kw = rd.u32()? as usize;
        if kh != kw {
            bail!(Format, "non-square kernel {}x{}", kh, kw);
        }
        let nnz = rd.u32()? as usize;
        let shape = LayerShape::new(filters, channels, kh);
        let scheme = match tag {
            0 => Scheme::Unstructured,
            1 => Scheme::Channel,
            2 => Scheme::Block { m: rd.u32()? as usize, n: rd.u32()? as usize },
            3 => Scheme::Pattern,
            t => bail!(Format, "unknown scheme tag {}", t),
        };
        scheme.validate(&shape).map_err(|e| crate::Error::Format(alloc::format!("{e}")))?;
        let mut channels_kept = Vec::new();
        if scheme == Scheme::Channel {
            let bitmap = rd.take(channels.div_ceil(8))?;
            channels_kept = (0..channels as u32)
                .filter(|&c| bitmap[c as usize / 8] & (1 << (c % 8)) != 0)
                .collect();
        }
        let (rows, per_index) = match scheme {
            Scheme::Unstructured => (filters, 1),
            Scheme::Pattern => (filters, 4),
            Scheme::Block { m, n } => (filters / m, m * n),
            Scheme::Channel => (0, 1),
        };
        let mut row_index = Vec::new();
        let mut indices = Vec::new();
        if scheme != Scheme::Channel {
            if !nnz.is_multiple_of(per_index) {
                bail!(Format, "{} values do not divide into units of {}", nnz, per_index);
            }
            for _ in 0..=rows {
                row_index.push(rd.index(b_index)?);
            }
            if row_index[0] != 0
                || row_index.windows(2).any(|w| w[0] > w[1])
                || *row_index.last().unwrap() as usize * per_index != nnz
            {
                bail!(Format, "inconsistent row_index");
            }
            for _ in 0..nnz / per_index {
                indices.push(rd.index(b_index)?);
            }
        } else if nnz != channels_kept.len() * filters * shape.taps() {
            bail!(Format, "channel layer stores {} values for {} kept channels", nnz, channels_kept.len());
        }
        let limit = match scheme {
            Scheme::Unstructured => shape.cols(),
            Scheme::Pattern => channels * PATTERN_STYLES,
            Scheme::Block { n, .. } => shape.cols() / n,
            Scheme::Channel => 0,
        };
        if indices.iter().any(|&i| i as usize >= limit) {
            bail!(Format, "index out of range");
        }
        let mut values = Vec::with_capacity(nnz);
        for _ in 0..nnz {
            values.push(if b_w == 32 {
                f32::from_le_bytes(rd.take(4)?.try_into().unwrap()) as f64
            } else {
                f64::from_le_bytes(rd.take(8)?.try_into().unwrap())
            });
        }
        let layer = Self {
            shape,
            scheme,
            value_bits: b_w,
            index_bits: b_index,
            row_index,
            indices,
            channels: channels_kept,
            values,
        };
        // reject topologies encode() could never have produced
        let (w, mask) = layer.decode();
        mask.validate().map_err(|e| crate::Error::Format(alloc::format!("{e}")))?;
        let canonical = Self::encode(w.data(), &mask, b_w, b_index)
            .map_err(|e| crate::Error::Format(alloc::format!("{e}")))?;
        if canonical.row_index != layer.row_index || canonical.indices != layer.indices {
            bail!(Format, "indices are not in canonical order");
        }
        Ok((layer, rd.pos))
    }
}

pub(crate) fn unpack_kernel(packed: u32) -> (usize, u8) {
    ((packed as usize) / PATTERN_STYLES, (packed as usize % PATTERN_STYLES) as u8)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            bail!(Format, "truncated compressed layer");
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn index(&mut self, bits: u8) -> Result<u32> {
        Ok(match bits {
            8 => self.u8()? as u32,
            16 => u16::from_le_bytes(self.take(2)?.try_into().unwrap()) as u32,
            _ => self.u32()?,
        })
    }
}
