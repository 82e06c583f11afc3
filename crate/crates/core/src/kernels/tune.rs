use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::spmm::KernelConfig;

const TILE_ROWS: [usize; 4] = [1, 4, 16, 64];
const TILE_COLS: [usize; 4] = [64, 256, 1024, 4096];
const UNROLLS: [usize; 3] = [1, 2, 4];

/// Search space over tile rows, tile columns and unroll factor for a
/// `rows x positions` product, clamped to the matrix and deduplicated.
/// The default configuration is always part of the grid. Sorted
/// lexicographically.
pub fn tuning_grid(rows: usize, positions: usize, reorder: bool) -> Vec<KernelConfig> {
    let mut grid = Vec::new();
    let default = KernelConfig { reorder, ..KernelConfig::default() };
    for &tr in &TILE_ROWS {
        for &tc in &TILE_COLS {
            for &unroll in &UNROLLS {
                grid.push(KernelConfig { tile_rows: tr, tile_cols: tc, unroll, reorder }.fit(rows, positions));
            }
        }
    }
    grid.push(default.fit(rows, positions));
    grid.sort();
    grid.dedup();
    grid
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub config: KernelConfig,
    /// Median of the timed repeats, in the caller's unit.
    pub median: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub best: KernelConfig,
    pub trials: Vec<Trial>,
}

/// Median of a sample; the lower middle element for even lengths.
pub fn median(samples: &mut [f64]) -> f64 {
    samples.sort_by(f64::total_cmp);
    samples[(samples.len() - 1) / 2]
}

/// Times up to `budget` grid points (taken in grid order) with `repeats`
/// calls each and returns the one with the smallest median. Ties go to the
/// lexicographically smaller configuration.
pub fn autotune(
    grid: &[KernelConfig],
    budget: usize,
    repeats: usize,
    mut measure: impl FnMut(&KernelConfig) -> f64,
) -> TuneResult {
    assert!(!grid.is_empty(), "empty tuning grid");
    let budget = budget.clamp(1, grid.len());
    let repeats = repeats.max(1);
    let mut trials = Vec::with_capacity(budget);
    let mut samples = Vec::with_capacity(repeats);
    for cfg in &grid[..budget] {
        samples.clear();
        samples.extend((0..repeats).map(|_| measure(cfg)));
        trials.push(Trial { config: *cfg, median: median(&mut samples) });
    }
    let best = trials
        .iter()
        .min_by(|a, b| a.median.total_cmp(&b.median).then(a.config.cmp(&b.config)))
        .map(|t| t.config)
        .expect("at least one trial");
    TuneResult { best, trials }
}
