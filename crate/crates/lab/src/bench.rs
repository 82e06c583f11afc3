//! Kernel microbenchmark: one convolution lowered to GEMM, timed in dense
//! and compressed form across schemes and sparsities.
//!
//! Every timed repeat visits all points once (the dense reference twice),
//! so slow drifts of the host affect every point alike. Reported times are
//! medians in microseconds.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use clap::ValueEnum;
use mest_core::kernels::{
    autotune, gemm, gemm_backward, im2col, matrix_reorder, median, output_rows_per_stored, spmm_backward,
    spmm_backward_reordered, spmm_rows, tuning_grid, unpermute_rows, ConvGeom, KernelConfig, TuneResult,
};
use mest_core::rng::{stream, Purpose};
use mest_core::sparsity::{random_mask, CompressedLayer, LayerShape, Scheme};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::fsio::{write_atomic, write_json};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum LayerPreset {
    /// 3x3 convolution, 64 input and 64 output channels, 16x16 feature map.
    Reference,
    Custom,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchLayer {
    pub filters: usize,
    pub channels: usize,
    pub kernel: usize,
    pub height: usize,
    pub width: usize,
}

impl BenchLayer {
    pub const REFERENCE: BenchLayer = BenchLayer { filters: 64, channels: 64, kernel: 3, height: 16, width: 16 };

    pub fn shape(&self) -> LayerShape {
        LayerShape::new(self.filters, self.channels, self.kernel)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchOptions {
    pub layer: BenchLayer,
    pub batch: usize,
    pub schemes: Vec<Scheme>,
    pub sparsities: Vec<f64>,
    pub warmup: usize,
    pub repeats: usize,
    pub seed: u64,
    pub parallel: bool,
    pub reorder: bool,
    /// Grid trials per point, if tuning.
    pub autotune: Option<usize>,
}

impl BenchOptions {
    pub fn reference() -> Self {
        Self {
            layer: BenchLayer::REFERENCE,
            batch: 4,
            schemes: vec![Scheme::Unstructured, Scheme::Channel, Scheme::DEFAULT_BLOCK, Scheme::Pattern],
            sparsities: vec![0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 0.98],
            warmup: 10,
            repeats: 30,
            seed: 0,
            parallel: false,
            reorder: false,
            autotune: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Machine {
    pub os: String,
    pub arch: String,
    pub available_threads: usize,
    /// Threads the kernels ran on.
    pub threads: usize,
}

impl Machine {
    fn current(parallel: bool) -> Self {
        Self {
            os: std::env::consts::OS.into(),
            arch: std::env::consts::ARCH.into(),
            available_threads: std::thread::available_parallelism().map_or(1, |n| n.get()),
            threads: if parallel { rayon::current_num_threads() } else { 1 },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccelPoint {
    pub scheme: String,
    pub sparsity: f64,
    pub nnz: usize,
    pub fwd_us: f64,
    pub bwd_us: f64,
    /// Dense forward+backward time over this point's forward+backward time.
    pub accel: f64,
    pub kernel: KernelConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Skipped {
    pub scheme: String,
    pub sparsity: f64,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TuneLog {
    pub scheme: String,
    pub sparsity: f64,
    pub result: TuneResult,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccelReport {
    pub layer: BenchLayer,
    pub batch: usize,
    pub machine: Machine,
    pub parallel: bool,
    pub reorder: bool,
    pub warmup: usize,
    pub repeats: usize,
    pub dense_fwd_us: f64,
    pub dense_bwd_us: f64,
    /// The dense kernel timed against a second series of itself.
    pub control: AccelPoint,
    pub points: Vec<AccelPoint>,
    pub skipped: Vec<Skipped>,
    pub tuning: Vec<TuneLog>,
}

struct Operands {
    geom: ConvGeom,
    cols: Vec<f64>,
    delta: Vec<f64>,
    dense: Vec<f64>,
}

enum Kernel {
    Dense,
    Sparse { layer: CompressedLayer, order: Option<Vec<usize>>, cfg: KernelConfig },
}

fn uniform(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn operands(o: &BenchOptions) -> Result<Operands> {
    let l = o.layer;
    let geom = ConvGeom {
        channels: l.channels,
        batch: o.batch,
        height: l.height,
        width: l.width,
        kernel: l.kernel,
        stride: 1,
        padding: l.kernel / 2,
    };
    geom.validate()?;
    let mut rng = stream(o.seed, Purpose::Test, 0, 0);
    let x = uniform(&mut rng, geom.input_len());
    let cols = im2col(&x, &geom)?;
    let delta = uniform(&mut rng, l.filters * geom.positions());
    // representable at 32 bits, so encoding keeps every value
    let dense = uniform(&mut rng, l.shape().weights()).into_iter().map(|v| v as f32 as f64).collect();
    Ok(Operands { geom, cols, delta, dense })
}

fn forward(k: &Kernel, op: &Operands, rows: usize, parallel: bool) -> Result<Vec<f64>> {
    let p = op.geom.positions();
    let cols = op.geom.col_rows();
    let cfg = KernelConfig::default();
    match k {
        Kernel::Dense if !parallel => Ok(gemm(&op.dense, rows, cols, &op.cols, p, None, &cfg)?),
        Kernel::Dense => {
            let chunk = rows.div_ceil(rayon::current_num_threads()).max(1);
            let parts: Vec<Vec<f64>> = op
                .dense
                .par_chunks(chunk * cols)
                .map(|w| gemm(w, w.len() / cols, cols, &op.cols, p, None, &cfg))
                .collect::<mest_core::Result<_>>()?;
            Ok(parts.concat())
        }
        Kernel::Sparse { layer, order, cfg } => {
            let per = output_rows_per_stored(layer);
            let stored = layer.shape().rows() / per;
            let groups = if parallel { rayon::current_num_threads() } else { 1 };
            let chunk = stored.div_ceil(groups).max(1);
            let ranges: Vec<_> = (0..stored).step_by(chunk).map(|a| a..(a + chunk).min(stored)).collect();
            let parts: Vec<Vec<f64>> = if parallel {
                ranges
                    .into_par_iter()
                    .map(|r| spmm_rows(layer, order.as_deref(), &op.cols, p, None, cfg, r))
                    .collect::<mest_core::Result<_>>()?
            } else {
                ranges
                    .into_iter()
                    .map(|r| spmm_rows(layer, order.as_deref(), &op.cols, p, None, cfg, r))
                    .collect::<mest_core::Result<_>>()?
            };
            let out = parts.concat();
            Ok(match order {
                Some(ord) => unpermute_rows(&out, ord, per, p),
                None => out,
            })
        }
    }
}

fn backward(k: &Kernel, op: &Operands, rows: usize) -> Result<()> {
    let p = op.geom.positions();
    let g = match k {
        Kernel::Dense => gemm_backward(&op.dense, rows, op.geom.col_rows(), &op.delta, &op.cols, p, &KernelConfig::default())?,
        Kernel::Sparse { layer, order: Some(ord), cfg } => spmm_backward_reordered(layer, ord, &op.delta, &op.cols, p, cfg)?,
        Kernel::Sparse { layer, order: None, cfg } => spmm_backward(layer, &op.delta, &op.cols, p, cfg)?,
    };
    std::hint::black_box(g);
    Ok(())
}

fn time_us(f: impl FnOnce() -> Result<()>) -> Result<f64> {
    let t = Instant::now();
    f()?;
    Ok(t.elapsed().as_secs_f64() * 1e6)
}

struct Series {
    kernel: Kernel,
    scheme: String,
    sparsity: f64,
    nnz: usize,
    fwd: Vec<f64>,
    bwd: Vec<f64>,
}

impl Series {
    fn new(kernel: Kernel, scheme: &str, sparsity: f64, nnz: usize) -> Self {
        Self { kernel, scheme: scheme.into(), sparsity, nnz, fwd: Vec::new(), bwd: Vec::new() }
    }

    fn step(&mut self, op: &Operands, rows: usize, parallel: bool, record: bool) -> Result<()> {
        let f = time_us(|| forward(&self.kernel, op, rows, parallel).map(|o| drop(std::hint::black_box(o))))?;
        let b = time_us(|| backward(&self.kernel, op, rows))?;
        if record {
            self.fwd.push(f);
            self.bwd.push(b);
        }
        Ok(())
    }

    fn medians(&mut self) -> (f64, f64) {
        (median(&mut self.fwd), median(&mut self.bwd))
    }
}

pub fn bench(o: &BenchOptions) -> Result<AccelReport> {
    if o.repeats == 0 || o.batch == 0 {
        return Err(LabError::Usage("repeats and batch must be at least 1".into()));
    }
    let op = operands(o)?;
    let shape = o.layer.shape();
    let rows = shape.rows();
    let mut series = vec![Series::new(Kernel::Dense, "dense", 0.0, shape.weights()), Series::new(Kernel::Dense, "dense", 0.0, shape.weights())];
    let mut skipped = Vec::new();
    let mut tuning = Vec::new();
    for (si, scheme) in o.schemes.iter().enumerate() {
        for (pi, &s) in o.sparsities.iter().enumerate() {
            let mask = match scheme.validate(&shape).and_then(|_| random_mask(shape, *scheme, s, o.seed ^ ((si * 1000 + pi) as u64 + 1))) {
                Ok(m) => m,
                Err(e) => {
                    skipped.push(Skipped { scheme: scheme.name().into(), sparsity: s, reason: e.to_string() });
                    continue;
                }
            };
            let layer = CompressedLayer::encode_fitting(&op.dense, &mask, 32)?;
            let (layer, order) = if o.reorder {
                let (ord, l) = matrix_reorder(&layer);
                (l, Some(ord))
            } else {
                (layer, None)
            };
            let mut cfg = KernelConfig { reorder: o.reorder, ..KernelConfig::default() };
            if let Some(budget) = o.autotune {
                let stored = rows / output_rows_per_stored(&layer);
                let grid = tuning_grid(stored, op.geom.positions(), o.reorder);
                let probe = |c: &KernelConfig| {
                    let k = Kernel::Sparse { layer: layer.clone(), order: order.clone(), cfg: *c };
                    time_us(|| forward(&k, &op, rows, o.parallel).map(drop)).unwrap_or(f64::INFINITY)
                };
                let res = autotune(&grid, budget, 5, probe);
                cfg = res.best;
                tuning.push(TuneLog { scheme: scheme.name().into(), sparsity: s, result: res });
            }
            let nnz = layer.nnz();
            series.push(Series::new(Kernel::Sparse { layer, order, cfg }, scheme.name(), s, nnz));
        }
    }
    for rep in 0..o.warmup + o.repeats {
        for sr in series.iter_mut() {
            sr.step(&op, rows, o.parallel, rep >= o.warmup)?;
        }
    }
    let (dense_fwd, dense_bwd) = series[0].medians();
    let dense_total = dense_fwd + dense_bwd;
    let point = |sr: &mut Series| {
        let (f, b) = sr.medians();
        let kernel = match &sr.kernel {
            Kernel::Sparse { cfg, .. } => *cfg,
            Kernel::Dense => KernelConfig::default(),
        };
        AccelPoint { scheme: sr.scheme.clone(), sparsity: sr.sparsity, nnz: sr.nnz, fwd_us: f, bwd_us: b, accel: dense_total / (f + b), kernel }
    };
    let control = point(&mut series[1]);
    let points = series[2..].iter_mut().map(point).collect();
    Ok(AccelReport {
        layer: o.layer,
        batch: o.batch,
        machine: Machine::current(o.parallel),
        parallel: o.parallel,
        reorder: o.reorder,
        warmup: o.warmup,
        repeats: o.repeats,
        dense_fwd_us: dense_fwd,
        dense_bwd_us: dense_bwd,
        control,
        points,
        skipped,
        tuning,
    })
}

pub fn accel_csv(r: &AccelReport) -> String {
    let mut out = String::from("scheme,sparsity,fwd_us,bwd_us,accel\n");
    for p in std::iter::once(&r.control).chain(&r.points) {
        writeln!(out, "{},{},{:.3},{:.3},{:.4}", p.scheme, p.sparsity, p.fwd_us, p.bwd_us, p.accel).expect("string write");
    }
    out
}

/// One gnuplot data block per scheme (`sparsity accel`), separated by two
/// blank lines so `index N` selects a scheme.
pub fn gnuplot_data(r: &AccelReport) -> String {
    let mut out = String::new();
    let mut last: Option<&str> = None;
    for p in &r.points {
        if last != Some(p.scheme.as_str()) {
            if last.is_some() {
                out.push_str("\n\n");
            }
            writeln!(out, "# {}\n# sparsity accel", p.scheme).expect("string write");
            last = Some(&p.scheme);
        }
        writeln!(out, "{} {}", p.sparsity, p.accel).expect("string write");
    }
    out
}

/// Writes `accel.csv`, `accel.dat`, `report.json` and, when tuning,
/// `tuning.json` into `dir`.
pub fn write_outputs(r: &AccelReport, dir: &Path) -> Result<()> {
    write_atomic(&dir.join("accel.csv"), accel_csv(r).as_bytes())?;
    write_atomic(&dir.join("accel.dat"), gnuplot_data(r).as_bytes())?;
    write_json(&dir.join("report.json"), r)?;
    if !r.tuning.is_empty() {
        write_json(&dir.join("tuning.json"), &r.tuning)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> BenchOptions {
        BenchOptions {
            layer: BenchLayer { filters: 8, channels: 4, kernel: 3, height: 6, width: 6 },
            batch: 2,
            sparsities: vec![0.5, 0.9],
            warmup: 1,
            repeats: 3,
            ..BenchOptions::reference()
        }
    }

    #[test]
    fn report_covers_the_grid() {
        let r = bench(&small()).unwrap();
        // pattern cannot reach 0.5
        assert_eq!(r.points.len(), 7);
        assert_eq!(r.skipped.len(), 1);
        assert_eq!((r.skipped[0].scheme.as_str(), r.skipped[0].sparsity), ("pattern", 0.5));
        assert!(r.points.iter().all(|p| p.fwd_us > 0.0 && p.bwd_us > 0.0 && p.accel > 0.0));
        let csv = accel_csv(&r);
        assert_eq!(csv.lines().count(), 1 + 1 + 7);
        assert!(csv.lines().nth(1).unwrap().starts_with("dense,0,"));
        assert_eq!(gnuplot_data(&r).matches("# sparsity accel").count(), 4);
    }

    #[test]
    fn forward_variants_agree_with_dense() {
        let o = BenchOptions { parallel: true, ..small() };
        let op = operands(&o).unwrap();
        let shape = o.layer.shape();
        let mask = random_mask(shape, Scheme::Unstructured, 0.0, 1).unwrap();
        let layer = CompressedLayer::encode_fitting(&op.dense, &mask, 32).unwrap();
        let want = forward(&Kernel::Dense, &op, 8, false).unwrap();
        assert_eq!(forward(&Kernel::Dense, &op, 8, true).unwrap(), want);
        let (ord, re) = matrix_reorder(&layer);
        for (k, par) in [
            (Kernel::Sparse { layer: layer.clone(), order: None, cfg: KernelConfig::default() }, false),
            (Kernel::Sparse { layer: re, order: Some(ord), cfg: KernelConfig::default() }, true),
        ] {
            assert_eq!(forward(&k, &op, 8, par).unwrap(), want);
        }
    }

    #[test]
    fn autotune_logs_trials() {
        let o = BenchOptions { schemes: vec![Scheme::Unstructured], sparsities: vec![0.9], autotune: Some(3), ..small() };
        let r = bench(&o).unwrap();
        assert_eq!(r.tuning.len(), 1);
        assert_eq!(r.tuning[0].result.trials.len(), 3);
        assert_eq!(r.points[0].kernel, r.tuning[0].result.best);
    }
}
