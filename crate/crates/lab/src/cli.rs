//! Subcommand implementations behind the `mest` binary.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use mest_core::flops::{flops_report, schedule_density, FlopsReport};
use mest_core::nn::Model;
use mest_core::sparsity::{footprint_bits, Accounting, FootprintMode, FootprintReport, LayerShape, Scheme};
use mest_core::train::RunConfig;

use crate::bench::{self, BenchOptions, LayerPreset};
use crate::checkpoint::Checkpoint;
use crate::error::{LabError, Result};
use crate::report;
use crate::run::{self, RunOptions};
use crate::{datasets, fsio};

#[derive(Debug, Parser)]
#[command(name = "mest", version, about = "Memory-economic sparse training laboratory")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one configuration and write its run directory.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the configured seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Continue from a checkpoint written by an earlier run of the same
        /// configuration.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Run directory (default: `runs/<config stem>-seed<N>`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Stop after this many epochs in total.
        #[arg(long)]
        stop_after: Option<usize>,
        #[arg(long, short)]
        quiet: bool,
    },
    /// Memory footprint of a configuration's model.
    Footprint {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum, default_value_t = FootprintCmd::Exact)]
        mode: FootprintCmd,
        /// Add a row for one momentum buffer.
        #[arg(long)]
        momentum: bool,
    },
    /// Forward and backward timing of compressed kernels against dense.
    Bench(BenchArgs),
    /// Forgetting statistics of a run, or a final-accuracy grid of a sweep.
    ForgettingReport {
        #[arg(long)]
        run: PathBuf,
        /// Removal threshold (default: the run's configured one).
        #[arg(long, allow_hyphen_values = true)]
        th: Option<i64>,
        /// Write CSVs here instead of the run directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-layer training and inference FLOPs per example.
    Flops {
        #[arg(long)]
        config: PathBuf,
    },
    /// Print the header and contents summary of a checkpoint.
    InspectCheckpoint { path: PathBuf },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum FootprintCmd {
    Exact,
    Approx,
    CompareAll,
}

#[derive(Debug, clap::Args)]
pub struct BenchArgs {
    #[arg(long, value_enum, default_value_t = LayerPreset::Reference)]
    pub layer: LayerPreset,
    /// Custom layer as `filters,channels,kernel,height,width`.
    #[arg(long)]
    pub shape: Option<String>,
    /// Comma-separated: unstructured, channel, block, pattern.
    #[arg(long, default_value = "unstructured,channel,block,pattern")]
    pub schemes: String,
    #[arg(long, default_value = "0.5,0.6,0.7,0.8,0.9,0.95,0.98")]
    pub sparsity_grid: String,
    #[arg(long, default_value_t = 30)]
    pub repeats: usize,
    #[arg(long, default_value_t = 10)]
    pub warmup: usize,
    #[arg(long, default_value_t = 4)]
    pub batch: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Split row groups across threads.
    #[arg(long)]
    pub parallel: bool,
    /// Group rows by nonzero count before timing.
    #[arg(long)]
    pub reorder: bool,
    /// Tune the kernel configuration per point with this many grid trials.
    #[arg(long)]
    pub autotune: Option<usize>,
    #[arg(long, default_value = "bench")]
    pub out: PathBuf,
}

pub fn run_cli(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { config, seed, resume, out, stop_after, quiet } => {
            let mut cfg = load_config(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let out = out.unwrap_or_else(|| {
                let stem = config.file_stem().map_or("run".into(), |s| s.to_string_lossy().into_owned());
                PathBuf::from("runs").join(format!("{stem}-seed{}", cfg.seed))
            });
            let opts = RunOptions { out_dir: out.clone(), data_root: datasets::data_root(), resume, stop_after, quiet };
            let outcome = run::run(cfg, &opts)?;
            println!(
                "{}: {} epochs, final test accuracy {:.4}, {} nonzeros",
                out.display(),
                outcome.summary.epochs,
                outcome.summary.final_test_acc,
                outcome.summary.final_nnz
            );
        }
        Command::Footprint { config, mode, momentum } => {
            let cfg = load_config(&config)?;
            print!("{}", footprint_table(&cfg, mode, momentum)?);
        }
        Command::Bench(args) => {
            let opts = bench_options(&args)?;
            let rep = bench::bench(&opts)?;
            bench::write_outputs(&rep, &args.out)?;
            print!("{}", bench::accel_csv(&rep));
        }
        Command::ForgettingReport { run, th, out } => {
            let text = report::forgetting_report(&run, th, out.as_deref())?;
            print!("{text}");
        }
        Command::Flops { config } => {
            let cfg = load_config(&config)?;
            print!("{}", flops_table(&plan(&cfg)?.flops(&cfg)?));
        }
        Command::InspectCheckpoint { path } => {
            let ck = run::load_checkpoint(&path)?;
            print!("{}", describe_checkpoint(&ck));
        }
    }
    Ok(())
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    if !path.is_file() {
        return Err(LabError::Usage(format!("{}: no such config file", path.display())));
    }
    let cfg: RunConfig = fsio::read_json(path)?;
    cfg.validate()?;
    Ok(cfg)
}

/// Model geometry and per-layer sparsity of a configuration, without data.
pub struct Plan {
    pub model: Model,
    pub shapes: Vec<LayerShape>,
    pub schemes: Vec<Option<Scheme>>,
    pub targets: Vec<f64>,
}

pub fn plan(cfg: &RunConfig) -> Result<Plan> {
    let (input, classes) = cfg.dataset.geometry();
    let model = Model::new(input, cfg.model.layers(input, classes)?)?;
    let shapes = model.param_shapes();
    let schemes = cfg.schemes(shapes.len())?;
    let targets = cfg.targets(&shapes)?;
    Ok(Plan { model, shapes, schemes, targets })
}

impl Plan {
    pub fn flops(&self, cfg: &RunConfig) -> Result<FlopsReport> {
        let densities: Vec<f64> = self
            .schemes
            .iter()
            .zip(&self.targets)
            .map(|(sc, &s)| sc.map_or(1.0, |_| schedule_density(&cfg.mutation, s)))
            .collect();
        Ok(flops_report(self.model.input_shape(), self.model.layers(), &densities)?)
    }

    /// Footprint under `mode` for the sparsified layers; dense-kept layers
    /// count as dense. A layer the mode's scheme cannot express (pattern on
    /// a non-3x3 layer or below its minimum sparsity, blocks that do not
    /// tile) falls back to unstructured storage; the returned flag reports
    /// whether that happened.
    pub fn footprint(&self, mode: Option<FootprintMode>, cfg: &RunConfig, acc: Accounting) -> Result<(FootprintReport, bool)> {
        let mut layers = Vec::new();
        let mut fallback = false;
        for ((shape, scheme), &s) in self.shapes.iter().zip(&self.schemes).zip(&self.targets) {
            let m = match (scheme, mode) {
                (None, _) => FootprintMode::Dense,
                (Some(sc), None) => FootprintMode::for_scheme(*sc),
                (Some(_), Some(FootprintMode::Pattern)) if shape.kernel != 3 || s < Scheme::Pattern.min_sparsity() => {
                    fallback = true;
                    FootprintMode::Unstructured
                }
                (Some(_), Some(FootprintMode::Block { m, n }))
                    if !shape.rows().is_multiple_of(m) || !shape.cols().is_multiple_of(n) =>
                {
                    fallback = true;
                    FootprintMode::Unstructured
                }
                (Some(_), Some(m)) => m,
            };
            let s = if scheme.is_some() { s } else { 0.0 };
            layers.push(footprint_bits(std::slice::from_ref(shape), m, s, cfg.widths, acc)?.layers[0]);
        }
        let mut rep = footprint_bits(&[], mode.unwrap_or(FootprintMode::Dense), 0.0, cfg.widths, acc)?;
        rep.weights = layers.iter().map(|l| l.weights).sum();
        rep.gradients = layers.iter().map(|l| l.gradients).sum();
        rep.indices = layers.iter().map(|l| l.indices).sum();
        rep.total = rep.weights + rep.gradients + rep.indices;
        rep.layers = layers;
        Ok((rep, fallback))
    }
}

fn row(out: &mut String, name: &str, w: f64, g: f64, i: f64) {
    writeln!(out, "{:<30} {:>14} {:>14} {:>14} {:>14}", name, w, g, i, w + g + i).expect("string write");
}

pub fn footprint_table(cfg: &RunConfig, mode: FootprintCmd, momentum: bool) -> Result<String> {
    let plan = plan(cfg)?;
    let mut out = String::new();
    writeln!(out, "{:<30} {:>14} {:>14} {:>14} {:>14}", "mode", "weight_bits", "gradient_bits", "index_bits", "total_bits")
        .expect("string write");
    let block = match cfg.scheme {
        Scheme::Block { m, n } => (m, n),
        _ => match Scheme::DEFAULT_BLOCK {
            Scheme::Block { m, n } => (m, n),
            _ => unreachable!(),
        },
    };
    let rows: Vec<(String, Option<FootprintMode>, Accounting)> = match mode {
        FootprintCmd::Exact => vec![("configured (exact)".into(), None, Accounting::Exact)],
        FootprintCmd::Approx => vec![("configured (approx)".into(), None, Accounting::Approx)],
        FootprintCmd::CompareAll => FootprintMode::all(block)
            .into_iter()
            .map(|m| (m.name().to_string(), Some(m), Accounting::Exact))
            .collect(),
    };
    let mut notes = false;
    for (name, m, acc) in rows {
        let (rep, fallback) = plan.footprint(m, cfg, acc)?;
        let name = if fallback { format!("{name}*") } else { name };
        notes |= fallback;
        row(&mut out, &name, rep.weights, rep.gradients, rep.indices);
        if momentum && m.is_none() {
            row(&mut out, "momentum", rep.momentum_bits(), 0.0, 0.0);
        }
    }
    if notes {
        out.push_str("* layers the scheme cannot express are counted as unstructured\n");
    }
    Ok(out)
}

pub fn flops_table(rep: &FlopsReport) -> String {
    let mut out = format!("{:<6} {:<6} {:>12} {:>8} {:>16} {:>16}\n", "layer", "kind", "dense_macs", "density", "inference", "training");
    for l in &rep.layers {
        writeln!(
            out,
            "{:<6} {:<6} {:>12} {:>8.4} {:>16.0} {:>16.0}",
            l.layer, l.kind, l.dense_macs, l.density, l.inference_flops, l.training_flops
        )
        .expect("string write");
    }
    writeln!(
        out,
        "total  inference {:.0}  training {:.0}  dense training {:.0}",
        rep.inference_flops, rep.training_flops, rep.dense_training_flops
    )
    .expect("string write");
    out
}

pub fn describe_checkpoint(ck: &Checkpoint) -> String {
    let hash: String = ck.config_hash.iter().map(|b| format!("{b:02x}")).collect();
    let mut out = format!("config hash {hash}\nepoch {}\nstep {}\n", ck.epoch, ck.step);
    for (i, p) in ck.params.iter().enumerate() {
        let (kind, nnz, total) = match &p.weights {
            mest_core::nn::WeightStore::Dense(w) => ("dense".to_string(), w.len(), w.len()),
            mest_core::nn::WeightStore::Sparse(cl) => {
                (cl.scheme().name().to_string(), cl.nnz(), cl.shape().weights())
            }
        };
        writeln!(out, "param {i}: {kind} {nnz}/{total} weights, {} biases", p.bias.len()).expect("string write");
    }
    writeln!(out, "forgetting log: {} examples x {} epochs", ck.examples, ck.forgetting.len()).expect("string write");
    match &ck.view {
        Some(v) => writeln!(out, "dataset view: {} of {} examples (e1 {}, th {})", v.len(), v.base_len, v.e1, v.th),
        None => writeln!(out, "dataset view: full"),
    }
    .expect("string write");
    writeln!(out, "history: {} epochs, {} mutation events", ck.history.len(), ck.mutations.len()).expect("string write");
    if let Some(m) = ck.history.last() {
        writeln!(out, "last test accuracy {}", m.test_acc).expect("string write");
    }
    out
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(|t| t.trim().parse().map_err(|_| LabError::Usage(format!("bad {what} entry {t:?}"))))
        .collect()
}

pub fn bench_options(a: &BenchArgs) -> Result<BenchOptions> {
    let layer = match (a.layer, &a.shape) {
        (LayerPreset::Custom, Some(s)) => {
            let v: Vec<usize> = parse_list(s, "shape")?;
            if v.len() != 5 {
                return Err(LabError::Usage("--shape needs filters,channels,kernel,height,width".into()));
            }
            bench::BenchLayer { filters: v[0], channels: v[1], kernel: v[2], height: v[3], width: v[4] }
        }
        (LayerPreset::Custom, None) => return Err(LabError::Usage("--layer custom needs --shape".into())),
        (LayerPreset::Reference, _) => bench::BenchLayer::REFERENCE,
    };
    let schemes = a
        .schemes
        .split(',')
        .map(|s| match s.trim() {
            "unstructured" => Ok(Scheme::Unstructured),
            "channel" => Ok(Scheme::Channel),
            "block" => Ok(Scheme::DEFAULT_BLOCK),
            "pattern" => Ok(Scheme::Pattern),
            other => Err(LabError::Usage(format!("unknown scheme {other:?}"))),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BenchOptions {
        layer,
        batch: a.batch,
        schemes,
        sparsities: parse_list(&a.sparsity_grid, "sparsity")?,
        warmup: a.warmup,
        repeats: a.repeats,
        seed: a.seed,
        parallel: a.parallel,
        reorder: a.reorder,
        autotune: a.autotune,
    })
}
