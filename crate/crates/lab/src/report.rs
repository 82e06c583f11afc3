//! Forgetting reports for one run, and final-accuracy grids over a sweep
//! of runs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use mest_core::forgetting::ForgettingLog;
use mest_core::train::RunConfig;

use crate::error::{LabError, Result};
use crate::fsio::{self, write_atomic};
use crate::run::{forgetting_csv, forgetting_curve_csv, load_checkpoint, Summary};

/// Newest checkpoint of a run directory: `final.ckpt`, else the highest
/// numbered `epoch-NNNN.ckpt`.
pub fn latest_checkpoint(dir: &Path) -> Option<PathBuf> {
    let fin = dir.join("final.ckpt");
    if fin.is_file() {
        return Some(fin);
    }
    let entries = std::fs::read_dir(dir).ok()?;
    entries
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().into_string().ok()?;
            let n: usize = name.strip_prefix("epoch-")?.strip_suffix(".ckpt")?.parse().ok()?;
            Some((n, e.path()))
        })
        .max_by_key(|(n, _)| *n)
        .map(|(_, p)| p)
}

/// Removed-example count for every threshold from -1 to the largest
/// forgetting count.
pub fn threshold_table(log: &ForgettingLog) -> Vec<(i64, usize)> {
    let max_f = log.stats().iter().map(|s| s.forgets).max().unwrap_or(0) as i64;
    (-1..=max_f).map(|th| (th, (0..log.len()).filter(|&i| log.removes(i, th)).count())).collect()
}

/// Writes forgetting CSVs for a run directory, or a grid for a sweep
/// directory (one holding run directories with `summary.json`), and
/// returns a printable summary.
pub fn forgetting_report(dir: &Path, th: Option<i64>, out: Option<&Path>) -> Result<String> {
    if let Some(ckpt) = latest_checkpoint(dir) {
        return run_report(dir, &ckpt, th, out.unwrap_or(dir));
    }
    let runs = sweep_runs(dir)?;
    if runs.is_empty() {
        return Err(LabError::Usage(format!("{}: no checkpoint and no run directories with summary.json", dir.display())));
    }
    sweep_report(&runs, out.unwrap_or(dir))
}

fn run_report(dir: &Path, ckpt: &Path, th: Option<i64>, out: &Path) -> Result<String> {
    let cfg: RunConfig = fsio::read_json(&dir.join("config.json"))?;
    let ck = load_checkpoint(ckpt)?;
    let log = ForgettingLog::from_history(ck.examples, &ck.forgetting)
        .map_err(|e| LabError::format(ckpt, e.to_string()))?;
    let th = th.unwrap_or(cfg.data_efficiency.th);
    write_atomic(&out.join(format!("forgetting-th{th}.csv")), forgetting_csv(&log, th).as_bytes())?;
    write_atomic(&out.join("forgetting_curve.csv"), forgetting_curve_csv(&log).as_bytes())?;
    let table = threshold_table(&log);
    let mut csv = String::from("th,removed,kept\n");
    for &(t, r) in &table {
        writeln!(csv, "{},{},{}", t, r, log.len() - r).expect("string write");
    }
    write_atomic(&out.join("thresholds.csv"), csv.as_bytes())?;
    let removed = (0..log.len()).filter(|&i| log.removes(i, th)).count();
    let mut text = format!(
        "{}: {} examples over {} recorded epochs\nth {}: {} removable, {} kept\n",
        ckpt.display(),
        log.len(),
        log.epochs(),
        th,
        removed,
        log.len() - removed
    );
    text.push_str("th removed\n");
    for (t, r) in table {
        writeln!(text, "{t:>2} {r}").expect("string write");
    }
    Ok(text)
}

fn sweep_runs(dir: &Path) -> Result<Vec<Summary>> {
    let entries = std::fs::read_dir(dir).map_err(|e| LabError::io(dir, e))?;
    let mut paths: Vec<PathBuf> =
        entries.filter_map(|e| e.ok()).map(|e| e.path().join("summary.json")).filter(|p| p.is_file()).collect();
    paths.sort();
    paths.iter().map(|p| fsio::read_json(p)).collect()
}

/// Mean final accuracy per `(e1, th, s)`; full-data runs appear with
/// empty `e1` and `th`.
fn sweep_report(runs: &[Summary], out: &Path) -> Result<String> {
    let mut cells: BTreeMap<(Option<usize>, Option<i64>, u64), Vec<&Summary>> = BTreeMap::new();
    for r in runs {
        cells.entry((r.e1, r.th, r.sparsity.to_bits())).or_default().push(r);
    }
    let opt = |v: Option<String>| v.unwrap_or_default();
    let mut csv = String::from("e1,th,sparsity,runs,mean_final_acc,mean_removed_fraction\n");
    let mut dat = String::from("# e1 th sparsity mean_final_acc\n");
    for ((e1, th, s), rs) in &cells {
        let n = rs.len() as f64;
        let acc = rs.iter().map(|r| r.final_test_acc).sum::<f64>() / n;
        let removed = rs.iter().map(|r| r.removed_fraction).sum::<f64>() / n;
        let s = f64::from_bits(*s);
        writeln!(csv, "{},{},{},{},{},{}", opt(e1.map(|v| v.to_string())), opt(th.map(|v| v.to_string())), s, rs.len(), acc, removed)
            .expect("string write");
        if let (Some(e1), Some(th)) = (e1, th) {
            writeln!(dat, "{e1} {th} {s} {acc}").expect("string write");
        }
    }
    write_atomic(&out.join("grid.csv"), csv.as_bytes())?;
    write_atomic(&out.join("grid.dat"), dat.as_bytes())?;
    Ok(csv)
}
