//! Training driver: loads data, runs epochs with wall-clock timing, and
//! writes metrics, checkpoints and forgetting statistics to a run
//! directory.
//!
//! Files in a run directory:
//! `config.json` (resolved configuration), `metrics.csv`, `timing.csv`,
//! `mutations.csv`, `forgetting.csv`, `forgetting_curve.csv`,
//! `manifest.txt` (kept examples after compression), `summary.json`,
//! `epoch-NNNN.ckpt` (state after NNNN epochs) and `final.ckpt`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use mest_core::data::{LabeledDataset, Normalization};
use mest_core::forgetting::{DatasetView, ForgettingLog};
use mest_core::mutation::Action;
use mest_core::train::{EpochMetrics, RunConfig, Trainer, TrainingState};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{config_hash, Checkpoint};
use crate::datasets;
use crate::error::{LabError, Result};
use crate::fsio::{self, write_atomic};

pub const METRICS_HEADER: &str =
    "epoch,lr,train_loss,train_acc,test_acc,nnz_total,sparsity_actual,dataset_size,p_current,footprint_bits";

pub fn metrics_csv(history: &[EpochMetrics]) -> String {
    let mut out = format!("{METRICS_HEADER}\n");
    for m in history {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            m.epoch,
            m.lr,
            m.train_loss,
            m.train_acc,
            m.test_acc,
            m.nnz_total,
            m.sparsity_actual,
            m.dataset_size,
            m.p_current,
            m.footprint_bits
        )
        .expect("string write");
    }
    out
}

fn mutations_csv(st: &TrainingState) -> String {
    let mut out = String::from("epoch,param,op,target,nnz\n");
    for e in &st.mutations {
        let (op, t) = match e.action {
            Action::RemoveTo { target } => ("remove_to", target),
            Action::GrowTo { target } => ("grow_to", target),
        };
        writeln!(out, "{},{},{},{},{}", e.epoch, e.param, op, t, e.nnz).expect("string write");
    }
    out
}

/// Per-example forgetting statistics; `removed` marks examples a
/// compression at threshold `th` drops.
pub fn forgetting_csv(log: &ForgettingLog, th: i64) -> String {
    let mut out = String::from("example_id,ever_correct,f_count,learn_count,removed_flag\n");
    for (i, s) in log.stats().iter().enumerate() {
        writeln!(out, "{},{},{},{},{}", i, s.ever_correct as u8, s.forgets, s.learns, log.removes(i, th) as u8)
            .expect("string write");
    }
    out
}

pub fn forgetting_curve_csv(log: &ForgettingLog) -> String {
    let mut out = String::from("epoch,unforgettable,forgotten,learned,never_correct\n");
    for p in log.curve() {
        writeln!(out, "{},{},{},{},{}", p.epoch, p.unforgettable, p.forgotten, p.learned, p.never_correct)
            .expect("string write");
    }
    out
}

/// Kept example indices, one per line, after a comment header.
pub fn manifest(view: &DatasetView) -> String {
    let mut out = format!("# e1={} th={} seed={} kept={} of {}\n", view.e1, view.th, view.seed, view.len(), view.base_len);
    for i in &view.indices {
        writeln!(out, "{i}").expect("string write");
    }
    out
}

/// Wall time of one epoch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochTime {
    pub epoch: usize,
    pub seconds: f64,
    pub dataset_size: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub epochs: usize,
    pub final_test_acc: f64,
    pub best_test_acc: f64,
    pub final_nnz: usize,
    pub final_sparsity: f64,
    pub footprint_bits: f64,
    pub training_flops_per_example: f64,
    pub inference_flops_per_example: f64,
    /// Fraction of training examples removed by compression (0 without).
    pub removed_fraction: f64,
    pub e1: Option<usize>,
    pub th: Option<i64>,
    pub sparsity: f64,
    pub seed: u64,
    pub phase1_epoch_seconds: Option<f64>,
    pub phase2_epoch_seconds: Option<f64>,
}

pub struct RunOptions {
    pub out_dir: PathBuf,
    pub data_root: PathBuf,
    pub resume: Option<PathBuf>,
    /// Stop after this many total epochs, leaving the run resumable.
    pub stop_after: Option<usize>,
    pub quiet: bool,
}

pub struct RunOutcome {
    pub config: RunConfig,
    pub state: TrainingState,
    pub times: Vec<EpochTime>,
    pub summary: Summary,
}

fn read_times(path: &Path, before: usize) -> Vec<EpochTime> {
    let Ok(text) = std::fs::read_to_string(path) else { return Vec::new() };
    text.lines()
        .skip(1)
        .filter_map(|l| {
            let mut f = l.split(',');
            let epoch = f.next()?.parse().ok()?;
            let seconds = f.next()?.parse().ok()?;
            let dataset_size = f.next()?.parse().ok()?;
            Some(EpochTime { epoch, seconds, dataset_size })
        })
        .filter(|t| t.epoch < before)
        .collect()
}

fn times_csv(times: &[EpochTime]) -> String {
    let mut out = String::from("epoch,seconds,dataset_size\n");
    for t in times {
        writeln!(out, "{},{},{}", t.epoch, t.seconds, t.dataset_size).expect("string write");
    }
    out
}

fn mean(v: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

/// Loads the data for `cfg` and fills in its normalization.
pub fn prepare(mut cfg: RunConfig, data_root: &Path) -> Result<(RunConfig, LabeledDataset, LabeledDataset)> {
    cfg.validate()?;
    let (train, test) = datasets::load(&cfg.dataset, data_root, cfg.seed)?;
    if cfg.normalization.is_none() {
        cfg.normalization = Some(Normalization::fit(&train));
    }
    Ok((cfg, train, test))
}

fn save_checkpoint(path: &Path, hash: crate::checkpoint::ConfigHash, st: &TrainingState) -> Result<()> {
    write_atomic(path, &Checkpoint::from_state(hash, st).to_bytes())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::from_bytes(&fsio::read(path)?).map_err(|source| LabError::Checkpoint { path: path.into(), source })
}

pub fn run(cfg: RunConfig, opts: &RunOptions) -> Result<RunOutcome> {
    let (cfg, train, test) = prepare(cfg, &opts.data_root)?;
    let trainer = Trainer::new(&cfg, &train, &test)?;
    let hash = config_hash(&cfg);
    let dir = &opts.out_dir;
    fsio::write_json(&dir.join("config.json"), &cfg)?;
    let mut st = match &opts.resume {
        Some(path) => load_checkpoint(path)?
            .into_state(&trainer, hash)
            .map_err(|source| LabError::Checkpoint { path: path.clone(), source })?,
        None => trainer.init_state()?,
    };
    let timing_path = dir.join("timing.csv");
    let mut times = if opts.resume.is_some() { read_times(&timing_path, st.epoch) } else { Vec::new() };
    let end = opts.stop_after.map_or(cfg.epochs, |n| n.min(cfg.epochs));
    while st.epoch < end {
        let t0 = Instant::now();
        let m = trainer.run_epoch(&mut st)?;
        let seconds = t0.elapsed().as_secs_f64();
        times.push(EpochTime { epoch: m.epoch, seconds, dataset_size: m.dataset_size });
        if !opts.quiet {
            eprintln!(
                "epoch {:>3}  loss {:.4}  train {:.4}  test {:.4}  nnz {}  data {}  {:.2}s",
                m.epoch, m.train_loss, m.train_acc, m.test_acc, m.nnz_total, m.dataset_size, seconds
            );
        }
        write_atomic(&dir.join("metrics.csv"), metrics_csv(&st.history).as_bytes())?;
        write_atomic(&timing_path, times_csv(&times).as_bytes())?;
        if cfg.checkpoint_every > 0 && st.epoch % cfg.checkpoint_every == 0 {
            save_checkpoint(&dir.join(format!("epoch-{:04}.ckpt", st.epoch)), hash, &st)?;
        }
        if let (Some(view), true) = (&st.view, m.epoch == cfg.e1()) {
            write_atomic(&dir.join("manifest.txt"), manifest(view).as_bytes())?;
        }
    }
    write_atomic(&dir.join("metrics.csv"), metrics_csv(&st.history).as_bytes())?;
    write_atomic(&dir.join("mutations.csv"), mutations_csv(&st).as_bytes())?;
    let th = cfg.data_efficiency.th;
    write_atomic(&dir.join("forgetting.csv"), forgetting_csv(&st.log, th).as_bytes())?;
    write_atomic(&dir.join("forgetting_curve.csv"), forgetting_curve_csv(&st.log).as_bytes())?;
    let ckpt = if st.epoch == cfg.epochs { dir.join("final.ckpt") } else { dir.join(format!("epoch-{:04}.ckpt", st.epoch)) };
    save_checkpoint(&ckpt, hash, &st)?;

    let flops = trainer.flops()?;
    let last = st.history.last();
    let de = cfg.data_efficiency.enabled.then(|| cfg.e1());
    let summary = Summary {
        epochs: st.epoch,
        final_test_acc: last.map_or(0.0, |m| m.test_acc),
        best_test_acc: st.history.iter().map(|m| m.test_acc).fold(0.0, f64::max),
        final_nnz: st.model.nnz(),
        final_sparsity: last.map_or(0.0, |m| m.sparsity_actual),
        footprint_bits: trainer.footprint(&st.model).total,
        training_flops_per_example: flops.training_flops,
        inference_flops_per_example: flops.inference_flops,
        removed_fraction: st.view.as_ref().map_or(0.0, |v| v.removed_fraction()),
        e1: de,
        th: de.map(|_| th),
        sparsity: cfg.sparsity,
        seed: cfg.seed,
        phase1_epoch_seconds: de.and_then(|e1| mean(times.iter().filter(|t| t.epoch < e1).map(|t| t.seconds))),
        phase2_epoch_seconds: de.and_then(|e1| mean(times.iter().filter(|t| t.epoch >= e1).map(|t| t.seconds))),
    };
    fsio::write_json(&dir.join("summary.json"), &summary)?;
    Ok(RunOutcome { config: cfg, state: st, times, summary })
}
