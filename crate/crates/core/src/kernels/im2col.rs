use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};

/// Geometry of a convolution over a channel-major `[C, B, H, W]` batch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvGeom {
    pub channels: usize,
    pub batch: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeom {
    pub fn validate(&self) -> Result<()> {
        if self.kernel == 0 || self.stride == 0 || self.channels == 0 || self.batch == 0 {
            bail!(Shape, "degenerate convolution geometry {:?}", self);
        }
        if self.height + 2 * self.padding < self.kernel || self.width + 2 * self.padding < self.kernel {
            bail!(Shape, "kernel {} larger than padded input {}x{}", self.kernel, self.height, self.width);
        }
        Ok(())
    }

    pub fn out_h(&self) -> usize {
        (self.height + 2 * self.padding - self.kernel) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.width + 2 * self.padding - self.kernel) / self.stride + 1
    }

    /// GEMM rows of the lowered input, `C * K^2`.
    pub fn col_rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    /// GEMM columns, one per output position: `B * Ho * Wo`.
    pub fn positions(&self) -> usize {
        self.batch * self.out_h() * self.out_w()
    }

    pub fn input_len(&self) -> usize {
        self.channels * self.batch * self.height * self.width
    }

    /// Input coordinate hit by output `o` and kernel offset `k` along one
    /// axis, or `None` inside the padding.
    #[inline]
    fn source(&self, o: usize, k: usize, extent: usize) -> Option<usize> {
        let i = (o * self.stride + k).checked_sub(self.padding)?;
        (i < extent).then_some(i)
    }
}

/// Lowers a `[C, B, H, W]` input to a `[C*K*K, B*Ho*Wo]` matrix; padded taps
/// are stored as zeros.
pub fn im2col(x: &[f64], g: &ConvGeom) -> Result<Vec<f64>> {
    g.validate()?;
    if x.len() != g.input_len() {
        bail!(Shape, "input holds {} values, geometry needs {}", x.len(), g.input_len());
    }
    let (oh, ow) = (g.out_h(), g.out_w());
    let p = g.positions();
    let mut cols = vec![0.0; g.col_rows() * p];
    let plane = g.height * g.width;
    for c in 0..g.channels {
        for kh in 0..g.kernel {
            for kw in 0..g.kernel {
                let row = (c * g.kernel + kh) * g.kernel + kw;
                let dst = &mut cols[row * p..(row + 1) * p];
                for b in 0..g.batch {
                    let src = &x[(c * g.batch + b) * plane..][..plane];
                    for oy in 0..oh {
                        let Some(iy) = g.source(oy, kh, g.height) else { continue };
                        let out = &mut dst[(b * oh + oy) * ow..][..ow];
                        for (ox, o) in out.iter_mut().enumerate() {
                            if let Some(ix) = g.source(ox, kw, g.width) {
                                *o = src[iy * g.width + ix];
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(cols)
}

/// Adjoint of [`im2col`]: sums a `[C*K*K, B*Ho*Wo]` matrix back into a
/// `[C, B, H, W]` buffer. Contributions land in row order, then position
/// order.
pub fn col2im(cols: &[f64], g: &ConvGeom) -> Result<Vec<f64>> {
    g.validate()?;
    let p = g.positions();
    if cols.len() != g.col_rows() * p {
        bail!(Shape, "column matrix holds {} values, geometry needs {}", cols.len(), g.col_rows() * p);
    }
    let (oh, ow) = (g.out_h(), g.out_w());
    let plane = g.height * g.width;
    let mut x = vec![0.0; g.input_len()];
    for c in 0..g.channels {
        for kh in 0..g.kernel {
            for kw in 0..g.kernel {
                let row = (c * g.kernel + kh) * g.kernel + kw;
                let src = &cols[row * p..(row + 1) * p];
                for b in 0..g.batch {
                    let dst = &mut x[(c * g.batch + b) * plane..][..plane];
                    for oy in 0..oh {
                        let Some(iy) = g.source(oy, kh, g.height) else { continue };
                        let line = &src[(b * oh + oy) * ow..][..ow];
                        for (ox, &v) in line.iter().enumerate() {
                            if let Some(ix) = g.source(ox, kw, g.width) {
                                dst[iy * g.width + ix] += v;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(x)
}

/// Reshapes a `[C, B, H, W]` batch into the `[C*H*W, B]` input matrix of a
/// fully connected layer (per-example flatten order `c, y, x`).
pub fn flatten_cols(x: &[f64], channels: usize, batch: usize, plane: usize) -> Vec<f64> {
    if plane == 1 {
        return x.to_vec();
    }
    let mut out = vec![0.0; x.len()];
    for c in 0..channels {
        for b in 0..batch {
            let src = &x[(c * batch + b) * plane..][..plane];
            for (i, &v) in src.iter().enumerate() {
                out[(c * plane + i) * batch + b] = v;
            }
        }
    }
    out
}

/// Inverse of [`flatten_cols`].
pub fn unflatten_cols(cols: &[f64], channels: usize, batch: usize, plane: usize) -> Vec<f64> {
    if plane == 1 {
        return cols.to_vec();
    }
    let mut out = vec![0.0; cols.len()];
    for c in 0..channels {
        for b in 0..batch {
            let dst = &mut out[(c * batch + b) * plane..][..plane];
            for (i, v) in dst.iter_mut().enumerate() {
                *v = cols[(c * plane + i) * batch + b];
            }
        }
    }
    out
}
