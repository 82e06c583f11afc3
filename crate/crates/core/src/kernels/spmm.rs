//! GEMM kernels over dense and compressed weights.
//!
//! All kernels compute `out[r][p] = sum_c W[r][c] * X[c][p] (+ bias[r])`
//! with `X` row-major `[cols, P]`. Every output element is accumulated from
//! zero over its active columns in ascending order and the bias is added
//! last, so tiling, unrolling and row reordering never change a single bit
//! of the result. Backward kernels sum `delta_prev` over rows in ascending
//! original order and weight gradients over positions in ascending order.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::sparsity::{pattern_taps, CompressedLayer, Scheme};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct KernelConfig {
    /// Output rows processed per tile.
    pub tile_rows: usize,
    /// Positions (GEMM columns of `X`) processed per tile.
    pub tile_cols: usize,
    /// Weight terms fused per pass over a tile row: 1, 2 or 4.
    pub unroll: usize,
    /// Whether rows were grouped by nonzero count (see [`matrix_reorder`]).
    pub reorder: bool,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self { tile_rows: 16, tile_cols: 512, unroll: 4, reorder: false }
    }
}

impl KernelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tile_rows == 0 || self.tile_cols == 0 {
            bail!(Config, "tile sizes must be at least 1, got {}x{}", self.tile_rows, self.tile_cols);
        }
        if !matches!(self.unroll, 1 | 2 | 4) {
            bail!(Config, "unroll must be 1, 2 or 4, got {}", self.unroll);
        }
        Ok(())
    }

    /// Clamps tile sizes to the matrix at hand.
    pub fn fit(&self, rows: usize, positions: usize) -> Self {
        Self {
            tile_rows: self.tile_rows.clamp(1, rows.max(1)),
            tile_cols: self.tile_cols.clamp(1, positions.max(1)),
            ..*self
        }
    }
}

/// One `(value slot, column)` pair per active weight of an output row.
type Terms = Vec<(u32, u32)>;

/// Number of output rows a stored row covers (block rows span `m`).
fn rows_per_stored(layer: &CompressedLayer) -> usize {
    match layer.scheme() {
        Scheme::Block { m, .. } => m,
        _ => 1,
    }
}

fn stored_rows(layer: &CompressedLayer) -> usize {
    layer.shape().rows() / rows_per_stored(layer)
}

/// Terms of output row `sub` within stored row `r`, ascending by column.
fn collect_terms(layer: &CompressedLayer, r: usize, sub: usize, out: &mut Terms) {
    out.clear();
    let shape = layer.shape();
    match layer.scheme() {
        Scheme::Unstructured => {
            let (lo, hi) = (layer.row_index()[r] as usize, layer.row_index()[r + 1] as usize);
            out.extend((lo..hi).map(|j| (j as u32, layer.indices()[j])));
        }
        Scheme::Pattern => {
            let (lo, hi) = (layer.row_index()[r] as usize, layer.row_index()[r + 1] as usize);
            for j in lo..hi {
                let (c, style) = crate::sparsity::unpack_kernel(layer.indices()[j]);
                for (t, tap) in pattern_taps(style).into_iter().enumerate() {
                    out.push(((j * 4 + t) as u32, (c * 9 + tap) as u32));
                }
            }
        }
        Scheme::Block { m, n } => {
            let (lo, hi) = (layer.row_index()[r] as usize, layer.row_index()[r + 1] as usize);
            for j in lo..hi {
                let bc = layer.indices()[j] as usize;
                for t in 0..n {
                    out.push(((j * m * n + sub * n + t) as u32, (bc * n + t) as u32));
                }
            }
        }
        Scheme::Channel => {
            let taps = shape.taps();
            let width = layer.channels().len() * taps;
            for (k, &c) in layer.channels().iter().enumerate() {
                for t in 0..taps {
                    out.push(((r * width + k * taps + t) as u32, (c as usize * taps + t) as u32));
                }
            }
        }
    }
}

fn dense_terms(cols: usize, r: usize, out: &mut Terms) {
    out.clear();
    out.extend((0..cols).map(|c| ((r * cols + c) as u32, c as u32)));
}

#[inline(always)]
fn axpy1(out: &mut [f64], w0: f64, x0: &[f64]) {
    let x0 = &x0[..out.len()];
    for i in 0..out.len() {
        out[i] += w0 * x0[i];
    }
}

#[inline(always)]
fn axpy2(out: &mut [f64], w: [f64; 2], x0: &[f64], x1: &[f64]) {
    let n = out.len();
    let (x0, x1) = (&x0[..n], &x1[..n]);
    for i in 0..n {
        out[i] = out[i] + w[0] * x0[i] + w[1] * x1[i];
    }
}

#[inline(always)]
fn axpy4(out: &mut [f64], w: [f64; 4], x: [&[f64]; 4]) {
    let n = out.len();
    let (x0, x1, x2, x3) = (&x[0][..n], &x[1][..n], &x[2][..n], &x[3][..n]);
    for i in 0..n {
        out[i] = out[i] + w[0] * x0[i] + w[1] * x1[i] + w[2] * x2[i] + w[3] * x3[i];
    }
}

/// `out += sum_k values[slot_k] * X[col_k][span]`, terms in order.
#[inline(always)]
fn accumulate(out: &mut [f64], terms: &[(u32, u32)], values: &[f64], x: &[f64], p: usize, span: Range<usize>, unroll: usize) {
    let row = |c: u32| &x[c as usize * p + span.start..c as usize * p + span.end];
    let mut k = 0;
    if unroll >= 4 {
        while k + 4 <= terms.len() {
            let t = &terms[k..k + 4];
            axpy4(
                out,
                [values[t[0].0 as usize], values[t[1].0 as usize], values[t[2].0 as usize], values[t[3].0 as usize]],
                [row(t[0].1), row(t[1].1), row(t[2].1), row(t[3].1)],
            );
            k += 4;
        }
    }
    if unroll >= 2 {
        while k + 2 <= terms.len() {
            let t = &terms[k..k + 2];
            axpy2(out, [values[t[0].0 as usize], values[t[1].0 as usize]], row(t[0].1), row(t[1].1));
            k += 2;
        }
    }
    while k < terms.len() {
        axpy1(out, values[terms[k].0 as usize], row(terms[k].1));
        k += 1;
    }
}

/// Source of per-row terms: a compressed layer or a dense matrix.
#[derive(Clone, Copy)]
enum Source<'a> {
    Dense { values: &'a [f64], rows: usize, cols: usize },
    Sparse { layer: &'a CompressedLayer, order: Option<&'a [usize]> },
}

impl<'a> Source<'a> {
    fn values(&self) -> &'a [f64] {
        match *self {
            Source::Dense { values, .. } => values,
            Source::Sparse { layer, .. } => layer.values(),
        }
    }

    fn stored_rows(&self) -> usize {
        match *self {
            Source::Dense { rows, .. } => rows,
            Source::Sparse { layer, .. } => stored_rows(layer),
        }
    }

    fn per_stored(&self) -> usize {
        match *self {
            Source::Dense { .. } => 1,
            Source::Sparse { layer, .. } => rows_per_stored(layer),
        }
    }

    fn out_rows(&self) -> usize {
        self.stored_rows() * self.per_stored()
    }

    fn cols(&self) -> usize {
        match *self {
            Source::Dense { cols, .. } => cols,
            Source::Sparse { layer, .. } => layer.shape().cols(),
        }
    }

    /// Original (unreordered) index of stored row `r`.
    fn original(&self, r: usize) -> usize {
        match *self {
            Source::Sparse { order: Some(o), .. } => o[r],
            _ => r,
        }
    }

    fn terms(&self, r: usize, sub: usize, out: &mut Terms) {
        match *self {
            Source::Dense { cols, .. } => dense_terms(cols, r, out),
            Source::Sparse { layer, .. } => collect_terms(layer, r, sub, out),
        }
    }

    fn check(&self, x: &[f64], p: usize, bias: Option<&[f64]>) -> Result<()> {
        if x.len() != self.cols() * p {
            bail!(Shape, "input matrix holds {} values, expected {} x {}", x.len(), self.cols(), p);
        }
        if let Some(b) = bias {
            if b.len() != self.out_rows() {
                bail!(Shape, "bias has {} entries for {} rows", b.len(), self.out_rows());
            }
        }
        if let Source::Sparse { order: Some(o), .. } = self {
            if o.len() != self.stored_rows() {
                bail!(Shape, "row order has {} entries for {} rows", o.len(), self.stored_rows());
            }
        }
        Ok(())
    }
}

/// Computes stored rows `rows` into `out`, laid out as consecutive output
/// rows in stored order (`rows.len() * per_stored` rows of `p`).
fn forward_rows(src: Source, x: &[f64], p: usize, bias: Option<&[f64]>, cfg: &KernelConfig, rows: Range<usize>, out: &mut [f64]) {
    let per = src.per_stored();
    let values = src.values();
    let mut terms = Terms::new();
    let start = rows.start;
    for rt in rows.clone().step_by(cfg.tile_rows) {
        let rt_end = (rt + cfg.tile_rows).min(rows.end);
        for p0 in (0..p).step_by(cfg.tile_cols) {
            let span = p0..(p0 + cfg.tile_cols).min(p);
            for r in rt..rt_end {
                for sub in 0..per {
                    src.terms(r, sub, &mut terms);
                    let local = (r - start) * per + sub;
                    let o = &mut out[local * p + span.start..local * p + span.end];
                    accumulate(o, &terms, values, x, p, span.clone(), cfg.unroll);
                }
            }
        }
    }
    if let Some(b) = bias {
        for r in rows.clone() {
            for sub in 0..per {
                let bv = b[src.original(r) * per + sub];
                let local = (r - start) * per + sub;
                out[local * p..(local + 1) * p].iter_mut().for_each(|v| *v += bv);
            }
        }
    }
}

fn forward(src: Source, x: &[f64], p: usize, bias: Option<&[f64]>, cfg: &KernelConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    src.check(x, p, bias)?;
    let cfg = cfg.fit(src.stored_rows(), p);
    let per = src.per_stored();
    let mut out = vec![0.0; src.out_rows() * p];
    match src {
        Source::Sparse { order: Some(order), .. } => {
            let mut staged = vec![0.0; out.len()];
            forward_rows(src, x, p, bias, &cfg, 0..src.stored_rows(), &mut staged);
            for (r, &orig) in order.iter().enumerate() {
                let n = per * p;
                out[orig * n..(orig + 1) * n].copy_from_slice(&staged[r * n..(r + 1) * n]);
            }
        }
        _ => forward_rows(src, x, p, bias, &cfg, 0..src.stored_rows(), &mut out),
    }
    Ok(out)
}

/// Dense `W x X + b` with `W` row-major `[rows, cols]`.
pub fn gemm(
    w: &[f64],
    rows: usize,
    cols: usize,
    x: &[f64],
    p: usize,
    bias: Option<&[f64]>,
    cfg: &KernelConfig,
) -> Result<Vec<f64>> {
    if w.len() != rows * cols {
        bail!(Shape, "weight matrix holds {} values, expected {} x {}", w.len(), rows, cols);
    }
    forward(Source::Dense { values: w, rows, cols }, x, p, bias, cfg)
}

/// Compressed `W x X + b`. Outputs are in original row order.
pub fn spmm(layer: &CompressedLayer, x: &[f64], p: usize, bias: Option<&[f64]>, cfg: &KernelConfig) -> Result<Vec<f64>> {
    forward(Source::Sparse { layer, order: None }, x, p, bias, cfg)
}

/// [`spmm`] over a layer produced by [`matrix_reorder`]; `order[i]` is the
/// original index of stored row `i`. Outputs are in original row order.
pub fn spmm_reordered(
    layer: &CompressedLayer,
    order: &[usize],
    x: &[f64],
    p: usize,
    bias: Option<&[f64]>,
    cfg: &KernelConfig,
) -> Result<Vec<f64>> {
    forward(Source::Sparse { layer, order: Some(order) }, x, p, bias, cfg)
}

/// Stored rows `rows` of a (possibly reordered) layer, written as
/// consecutive output rows in stored order. Lets callers split the rows of
/// one product across workers.
pub fn spmm_rows(
    layer: &CompressedLayer,
    order: Option<&[usize]>,
    x: &[f64],
    p: usize,
    bias: Option<&[f64]>,
    cfg: &KernelConfig,
    rows: Range<usize>,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    let src = Source::Sparse { layer, order };
    src.check(x, p, bias)?;
    if rows.end > src.stored_rows() || rows.start > rows.end {
        bail!(Shape, "row range {:?} outside {} stored rows", rows, src.stored_rows());
    }
    let cfg = cfg.fit(src.stored_rows(), p);
    let mut out = vec![0.0; rows.len() * src.per_stored() * p];
    forward_rows(src, x, p, bias, &cfg, rows, &mut out);
    Ok(out)
}

/// Number of output rows in one stored row of `layer` (`m` for blocks).
pub fn output_rows_per_stored(layer: &CompressedLayer) -> usize {
    rows_per_stored(layer)
}

/// Gradients of one GEMM layer.
#[derive(Clone, Debug, PartialEq)]
pub struct GemmGrads {
    /// `W^T delta`, row-major `[cols, P]`.
    pub input: Vec<f64>,
    /// Weight gradient in the storage layout of the weights.
    pub weights: Vec<f64>,
    /// Row sums of `delta`.
    pub bias: Vec<f64>,
}

#[inline(always)]
fn scatter_rows(dx: &mut [f64], terms: &[(u32, u32)], values: &[f64], d: &[f64], p: usize, span: Range<usize>, unroll: usize) {
    let n = span.len();
    let mut k = 0;
    if unroll >= 2 {
        while k + 2 <= terms.len() {
            let (c0, c1) = (terms[k].1 as usize * p + span.start, terms[k + 1].1 as usize * p + span.start);
            let (w0, w1) = (values[terms[k].0 as usize], values[terms[k + 1].0 as usize]);
            let [a, b] = dx.get_disjoint_mut([c0..c0 + n, c1..c1 + n]).expect("distinct columns");
            for i in 0..n {
                let v = d[i];
                a[i] += w0 * v;
                b[i] += w1 * v;
            }
            k += 2;
        }
    }
    while k < terms.len() {
        let c = terms[k].1 as usize * p + span.start;
        axpy1(&mut dx[c..c + n], values[terms[k].0 as usize], d);
        k += 1;
    }
}

#[inline(always)]
fn dot_into(g: &mut [f64], terms: &[(u32, u32)], d: &[f64], x: &[f64], p: usize, span: Range<usize>, unroll: usize) {
    let n = span.len();
    let row = |c: u32| &x[c as usize * p + span.start..][..n];
    let mut k = 0;
    if unroll >= 4 {
        while k + 4 <= terms.len() {
            let t = &terms[k..k + 4];
            let (x0, x1, x2, x3) = (row(t[0].1), row(t[1].1), row(t[2].1), row(t[3].1));
            let mut acc = [g[t[0].0 as usize], g[t[1].0 as usize], g[t[2].0 as usize], g[t[3].0 as usize]];
            for i in 0..n {
                let v = d[i];
                acc[0] += v * x0[i];
                acc[1] += v * x1[i];
                acc[2] += v * x2[i];
                acc[3] += v * x3[i];
            }
            for (j, a) in acc.into_iter().enumerate() {
                g[t[j].0 as usize] = a;
            }
            k += 4;
        }
    }
    while k < terms.len() {
        let xr = row(terms[k].1);
        let mut acc = g[terms[k].0 as usize];
        for i in 0..n {
            acc += d[i] * xr[i];
        }
        g[terms[k].0 as usize] = acc;
        k += 1;
    }
}

fn backward(src: Source, delta: &[f64], x: &[f64], p: usize, cfg: &KernelConfig) -> Result<GemmGrads> {
    cfg.validate()?;
    src.check(x, p, None)?;
    let rows = src.out_rows();
    if delta.len() != rows * p {
        bail!(Shape, "delta holds {} values, expected {} x {}", delta.len(), rows, p);
    }
    let cfg = cfg.fit(src.stored_rows(), p);
    let per = src.per_stored();
    let values = src.values();
    let mut input = vec![0.0; src.cols() * p];
    let mut weights = vec![0.0; values.len()];
    let bias = (0..rows).map(|r| delta[r * p..(r + 1) * p].iter().fold(0.0, |a, &v| a + v)).collect();

    // visit stored rows in original order so that sums over rows run
    // ascending regardless of the storage order
    let mut visit: Vec<usize> = (0..src.stored_rows()).collect();
    visit.sort_by_key(|&r| src.original(r));
    let mut terms = Terms::new();
    for p0 in (0..p).step_by(cfg.tile_cols) {
        let span = p0..(p0 + cfg.tile_cols).min(p);
        for chunk in visit.chunks(cfg.tile_rows) {
            for &r in chunk {
                let orig = src.original(r);
                for sub in 0..per {
                    src.terms(r, sub, &mut terms);
                    let d = &delta[(orig * per + sub) * p + span.start..(orig * per + sub) * p + span.end];
                    scatter_rows(&mut input, &terms, values, d, p, span.clone(), cfg.unroll);
                    dot_into(&mut weights, &terms, d, x, p, span.clone(), cfg.unroll);
                }
            }
        }
    }
    Ok(GemmGrads { input, weights, bias })
}

/// Backward pass of [`gemm`].
pub fn gemm_backward(
    w: &[f64],
    rows: usize,
    cols: usize,
    delta: &[f64],
    x: &[f64],
    p: usize,
    cfg: &KernelConfig,
) -> Result<GemmGrads> {
    if w.len() != rows * cols {
        bail!(Shape, "weight matrix holds {} values, expected {} x {}", w.len(), rows, cols);
    }
    backward(Source::Dense { values: w, rows, cols }, delta, x, p, cfg)
}

/// Backward pass of [`spmm`]. The weight gradient is emitted in the layer's
/// compressed layout: entry `i` belongs to the weight stored in slot `i`,
/// so it shares the layer's index arrays.
pub fn spmm_backward(layer: &CompressedLayer, delta: &[f64], x: &[f64], p: usize, cfg: &KernelConfig) -> Result<GemmGrads> {
    backward(Source::Sparse { layer, order: None }, delta, x, p, cfg)
}

/// Backward pass of [`spmm_reordered`]; `delta` and the input gradient are
/// in original row order, the weight gradient in the reordered layout.
pub fn spmm_backward_reordered(
    layer: &CompressedLayer,
    order: &[usize],
    delta: &[f64],
    x: &[f64],
    p: usize,
    cfg: &KernelConfig,
) -> Result<GemmGrads> {
    backward(Source::Sparse { layer, order: Some(order) }, delta, x, p, cfg)
}

/// Groups stored rows by nonzero count, densest first (stable). Returns the
/// permutation (`order[i]` = original index of new row `i`) and the
/// permuted layer. Block layers are permuted by block row.
pub fn matrix_reorder(layer: &CompressedLayer) -> (Vec<usize>, CompressedLayer) {
    let rows = stored_rows(layer);
    let nnz = |r: usize| -> usize {
        match layer.scheme() {
            Scheme::Channel => layer.channels().len(),
            _ => (layer.row_index()[r + 1] - layer.row_index()[r]) as usize,
        }
    };
    let mut order: Vec<usize> = (0..rows).collect();
    order.sort_by_key(|&r| core::cmp::Reverse(nnz(r)));
    let permuted = layer.permute_rows(&order);
    (order, permuted)
}

/// Undoes a row permutation on a `[rows * per, p]` output produced in
/// stored order.
pub fn unpermute_rows(out: &[f64], order: &[usize], per: usize, p: usize) -> Vec<f64> {
    let mut res = vec![0.0; out.len()];
    let n = per * p;
    for (r, &orig) in order.iter().enumerate() {
        res[orig * n..(orig + 1) * n].copy_from_slice(&out[r * n..(r + 1) * n]);
    }
    res
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparsity::{random_mask, LayerShape, Mask};

    fn naive(w: &[f64], rows: usize, cols: usize, x: &[f64], p: usize) -> Vec<f64> {
        let mut out = vec![0.0; rows * p];
        for r in 0..rows {
            for q in 0..p {
                let mut acc = 0.0;
                for c in 0..cols {
                    acc += w[r * cols + c] * x[c * p + q];
                }
                out[r * p + q] = acc;
            }
        }
        out
    }

    fn values(n: usize, salt: f64) -> Vec<f64> {
        (0..n).map(|i| libm::sin(i as f64 * 0.731 + salt)).collect()
    }

    #[test]
    fn dense_gemm_matches_naive_bitwise() {
        let (rows, cols, p) = (5, 7, 13);
        let w = values(rows * cols, 0.3);
        let x = values(cols * p, 1.1);
        for unroll in [1, 2, 4] {
            let cfg = KernelConfig { tile_rows: 2, tile_cols: 4, unroll, reorder: false };
            assert_eq!(gemm(&w, rows, cols, &x, p, None, &cfg).unwrap(), naive(&w, rows, cols, &x, p));
        }
    }

    #[test]
    fn fully_dense_compressed_layer_is_bitwise_dense() {
        let shape = LayerShape::new(8, 4, 3);
        let w = values(shape.weights(), 0.0);
        let mask = Mask::new(shape, Scheme::Unstructured, vec![true; shape.weights()]).unwrap();
        let cl = CompressedLayer::encode_fitting(&w, &mask, 64).unwrap();
        let x = values(shape.cols() * 10, 2.0);
        let cfg = KernelConfig::default();
        assert_eq!(
            spmm(&cl, &x, 10, None, &cfg).unwrap(),
            gemm(&w, 8, shape.cols(), &x, 10, None, &cfg).unwrap()
        );
    }

    #[test]
    fn reorder_example() {
        let shape = LayerShape::fc(5, 4);
        let mut bits = vec![false; 20];
        for (r, n) in [5usize, 1, 5, 1].into_iter().enumerate() {
            bits[r * 5..r * 5 + n].iter_mut().for_each(|b| *b = true);
        }
        let mask = Mask::new(shape, Scheme::Unstructured, bits).unwrap();
        let cl = CompressedLayer::encode(&values(20, 0.0), &mask, 64, 8).unwrap();
        let (order, _) = matrix_reorder(&cl);
        assert_eq!(order, [0, 2, 1, 3]);
    }

    #[test]
    fn sorted_rows_keep_identity_order() {
        let shape = LayerShape::new(8, 4, 3);
        let mask = Mask::new(shape, Scheme::Unstructured, vec![true; shape.weights()]).unwrap();
        let cl = CompressedLayer::encode_fitting(&values(shape.weights(), 0.0), &mask, 64).unwrap();
        let (order, same) = matrix_reorder(&cl);
        assert_eq!(order, (0..8).collect::<Vec<_>>());
        assert_eq!(same, cl);
    }

    #[test]
    fn zero_delta_gives_zero_gradients() {
        let shape = LayerShape::new(8, 4, 3);
        let mask = random_mask(shape, Scheme::Pattern, 0.8, 4).unwrap();
        let cl = CompressedLayer::encode_fitting(&values(shape.weights(), 0.0), &mask, 64).unwrap();
        let g = spmm_backward(&cl, &vec![0.0; 8 * 6], &values(shape.cols() * 6, 1.0), 6, &KernelConfig::default())
            .unwrap();
        assert!(g.input.iter().chain(&g.weights).chain(&g.bias).all(|&v| v == 0.0));
        assert_eq!(g.weights.len(), cl.nnz());
    }

    #[test]
    fn bad_configs_are_rejected() {
        let cfg = KernelConfig { unroll: 3, ..Default::default() };
        assert!(cfg.validate().is_err());
        assert!(KernelConfig { tile_rows: 0, ..Default::default() }.validate().is_err());
        let fitted = KernelConfig { tile_rows: 100, tile_cols: 9999, ..Default::default() }.fit(4, 10);
        assert_eq!((fitted.tile_rows, fitted.tile_cols), (4, 10));
    }
}
