//! Forgetting-event bookkeeping and training-set compression.
//!
//! Each example is observed once per epoch as correct or incorrect. Before
//! the first observation an example counts as incorrect, so its first
//! correct observation is a learning event; a correct-to-incorrect step is
//! a forgetting event. Hence `forgets <= learns` always holds.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExampleStats {
    pub observed: u32,
    pub ever_correct: bool,
    pub last_correct: bool,
    pub forgets: u32,
    pub learns: u32,
}

impl ExampleStats {
    /// Ever classified correctly and never forgotten.
    pub fn unforgettable(&self) -> bool {
        self.ever_correct && self.forgets == 0
    }
}

/// Per-epoch summary of the log.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub epoch: usize,
    pub unforgettable: usize,
    /// Forgetting events during this epoch.
    pub forgotten: usize,
    /// Learning events during this epoch.
    pub learned: usize,
    pub never_correct: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForgettingLog {
    stats: Vec<ExampleStats>,
    /// One correctness vector per recorded epoch.
    history: Vec<Vec<bool>>,
    curve: Vec<CurvePoint>,
}

impl ForgettingLog {
    pub fn new(examples: usize) -> Self {
        Self { stats: alloc::vec![ExampleStats::default(); examples], history: Vec::new(), curve: Vec::new() }
    }

    /// Rebuilds a log by replaying stored per-epoch observations.
    pub fn from_history(examples: usize, history: &[Vec<bool>]) -> Result<Self> {
        let mut log = Self::new(examples);
        for epoch in history {
            log.record_epoch(epoch)?;
        }
        Ok(log)
    }

    pub fn len(&self) -> usize {
        self.stats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stats.is_empty()
    }

    pub fn epochs(&self) -> usize {
        self.history.len()
    }

    pub fn stats(&self) -> &[ExampleStats] {
        &self.stats
    }

    pub fn history(&self) -> &[Vec<bool>] {
        &self.history
    }

    /// Folds one epoch of observations into the log.
    pub fn record_epoch(&mut self, correct: &[bool]) -> Result<()> {
        if correct.len() != self.stats.len() {
            bail!(Shape, "{} observations for {} examples", correct.len(), self.stats.len());
        }
        let mut point = CurvePoint { epoch: self.history.len(), ..Default::default() };
        for (s, &c) in self.stats.iter_mut().zip(correct) {
            match (s.last_correct, c) {
                (true, false) => {
                    s.forgets += 1;
                    point.forgotten += 1;
                }
                (false, true) => {
                    s.learns += 1;
                    point.learned += 1;
                }
                _ => {}
            }
            s.last_correct = c;
            s.ever_correct |= c;
            s.observed += 1;
        }
        point.unforgettable = self.stats.iter().filter(|s| s.unforgettable()).count();
        point.never_correct = self.stats.iter().filter(|s| !s.ever_correct).count();
        self.history.push(correct.to_vec());
        self.curve.push(point);
        Ok(())
    }

    /// Indices of unforgettable examples, ascending.
    pub fn unforgettable_set(&self) -> Vec<usize> {
        (0..self.stats.len()).filter(|&i| self.stats[i].unforgettable()).collect()
    }

    /// Whether compression at threshold `th` removes example `i`. A
    /// negative threshold removes nothing.
    pub fn removes(&self, i: usize, th: i64) -> bool {
        let s = &self.stats[i];
        th >= 0 && s.ever_correct && s.forgets as i64 <= th
    }

    /// Drops every example that was learned and forgotten at most `th`
    /// times; never-learned examples are always kept.
    pub fn compress(&self, th: i64, e1: usize, seed: u64) -> Result<DatasetView> {
        if self.history.is_empty() {
            bail!(State, "no epoch recorded before compression");
        }
        let indices: Vec<usize> = (0..self.stats.len()).filter(|&i| !self.removes(i, th)).collect();
        if indices.is_empty() {
            bail!(Feasibility, "threshold {} removes every training example", th);
        }
        Ok(DatasetView { base_len: self.stats.len(), indices, th, e1, seed })
    }

    /// Per-epoch series of unforgettable, forgotten and learned counts.
    pub fn curve(&self) -> &[CurvePoint] {
        &self.curve
    }
}

/// Subset of a base dataset used for training.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetView {
    pub base_len: usize,
    /// Kept example indices, ascending.
    pub indices: Vec<usize>,
    /// Threshold that produced the view (`-1` for the full set).
    pub th: i64,
    /// Epoch at which it was produced.
    pub e1: usize,
    pub seed: u64,
}

impl DatasetView {
    pub fn full(base_len: usize) -> Self {
        Self { base_len, indices: (0..base_len).collect(), th: -1, e1: 0, seed: 0 }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn removed_fraction(&self) -> f64 {
        1.0 - self.indices.len() as f64 / self.base_len as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    const C: bool = true;
    const I: bool = false;

    fn log_of(histories: &[&[bool]]) -> ForgettingLog {
        let mut log = ForgettingLog::new(histories.len());
        for e in 0..histories[0].len() {
            let col: Vec<bool> = histories.iter().map(|h| h[e]).collect();
            log.record_epoch(&col).unwrap();
        }
        log
    }

    #[test]
    fn hand_histories() {
        let log = log_of(&[&[C, C, C], &[C, I, C], &[I, I, I]]);
        let s = log.stats();
        assert_eq!((s[0].forgets, s[0].learns, s[0].unforgettable()), (0, 1, true));
        assert_eq!((s[1].forgets, s[1].learns), (1, 2));
        assert_eq!((s[2].forgets, s[2].ever_correct, s[2].unforgettable()), (0, false, false));
        assert_eq!(log.unforgettable_set(), [0]);
    }

    #[test]
    fn alternating_history() {
        let log = log_of(&[&[C, I, C, I]]);
        assert_eq!(log.stats()[0].forgets, 2);
        assert_eq!(log.stats()[0].learns, 2);
    }

    #[test]
    fn thresholds() {
        let log = log_of(&[&[C, C], &[C, I], &[I, I], &[I, C]]);
        assert_eq!(log.compress(-1, 2, 0).unwrap().indices, [0, 1, 2, 3]);
        assert_eq!(log.compress(0, 2, 0).unwrap().indices, [1, 2]);
        assert_eq!(log.compress(1, 2, 0).unwrap().indices, [2]);
    }

    #[test]
    fn compressing_everything_is_infeasible() {
        let log = log_of(&[&[C, C], &[C, C]]);
        assert!(matches!(log.compress(0, 2, 0), Err(crate::Error::Feasibility(_))));
        assert!(matches!(ForgettingLog::new(3).compress(0, 0, 0), Err(crate::Error::State(_))));
    }

    #[test]
    fn curve_by_hand() {
        let log = log_of(&[&[C, I, C], &[I, C, C], &[I, I, I]]);
        let curve: Vec<(usize, usize, usize)> =
            log.curve().iter().map(|p| (p.unforgettable, p.forgotten, p.learned)).collect();
        assert_eq!(curve, vec![(1, 0, 1), (1, 1, 1), (1, 0, 1)]);
        assert_eq!(log.curve()[2].never_correct, 1);
    }

    #[test]
    fn replay_matches_incremental() {
        let log = log_of(&[&[C, I, C], &[I, C, I], &[C, C, I]]);
        assert_eq!(ForgettingLog::from_history(3, log.history()).unwrap(), log);
    }

    #[test]
    fn length_mismatch() {
        assert!(ForgettingLog::new(2).record_epoch(&[true]).is_err());
    }
}
