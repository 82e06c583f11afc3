//! SGD with momentum and weight decay, and the warm-up plus cosine
//! learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};

fn default_momentum() -> f64 {
    0.9
}

fn default_weight_decay() -> f64 {
    5e-4
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub lr0: f64,
    #[serde(default)]
    pub lr_end: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    /// Linear warm-up epochs.
    #[serde(default)]
    pub warmup: usize,
}

impl OptimizerConfig {
    pub fn validate(&self, epochs: usize) -> Result<()> {
        let finite = [self.lr0, self.lr_end, self.momentum, self.weight_decay].iter().all(|v| v.is_finite());
        if !finite || self.lr0 <= 0.0 || self.lr_end < 0.0 {
            bail!(Config, "learning rates must be finite with lr0 > 0 and lr_end >= 0");
        }
        if !(0.0..1.0).contains(&self.momentum) || self.weight_decay < 0.0 {
            bail!(Config, "momentum must lie in [0, 1) and weight decay be nonnegative");
        }
        if self.warmup >= epochs {
            bail!(Config, "warm-up of {} epochs leaves no room in {} epochs", self.warmup, epochs);
        }
        Ok(())
    }

    /// Learning rate for minibatch `batch` of `batches` in epoch `epoch` of
    /// `epochs`. Progress is measured after the step, so the first step of
    /// a warm-up uses `lr0 / (warmup * batches)` and the final step of the
    /// run uses `lr_end`.
    pub fn lr_at(&self, epoch: usize, batch: usize, batches: usize, epochs: usize) -> f64 {
        let u = epoch as f64 + (batch + 1) as f64 / batches.max(1) as f64;
        let w = self.warmup as f64;
        if u <= w {
            return self.lr0 * u / w;
        }
        let t = ((u - w) / (epochs as f64 - w)).min(1.0);
        self.lr_end + (self.lr0 - self.lr_end) * (1.0 + libm::cos(core::f64::consts::PI * t)) / 2.0
    }
}

/// One SGD step over aligned slices: `v = mu * v + g + wd * w`, then
/// `w -= lr * v`. Only the stored (active) weights are touched.
pub fn sgd_step(weights: &mut [f64], grads: &[f64], velocity: &mut [f64], lr: f64, momentum: f64, wd: f64) {
    debug_assert_eq!(weights.len(), grads.len());
    debug_assert_eq!(weights.len(), velocity.len());
    for ((w, &g), v) in weights.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        *v = momentum * *v + g + wd * *w;
        *w -= lr * *v;
    }
}

/// Rounds every value to the nearest 32-bit float.
pub fn round_f32(values: &mut [f64]) {
    values.iter_mut().for_each(|v| *v = *v as f32 as f64);
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(warmup: usize) -> OptimizerConfig {
        OptimizerConfig { lr0: 0.1, lr_end: 4e-8, momentum: 0.9, weight_decay: 5e-4, warmup }
    }

    #[test]
    fn warmup_ramp_starts_small() {
        let c = cfg(8);
        assert!((c.lr_at(0, 0, 100, 160) - 0.1 / 8.0 / 100.0).abs() < 1e-15);
        assert!((c.lr_at(7, 99, 100, 160) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn cosine_midpoint_and_end() {
        let c = cfg(0);
        // u = 80 is halfway through 160 epochs
        assert!((c.lr_at(79, 9, 10, 160) - (0.1 + 4e-8) / 2.0).abs() < 1e-15);
        assert_eq!(c.lr_at(159, 9, 10, 160), 4e-8);
        let w = cfg(8);
        assert!((w.lr_at(83, 9, 10, 160) - (0.1 + 4e-8) / 2.0).abs() < 1e-15);
        assert_eq!(w.lr_at(159, 9, 10, 160), 4e-8);
    }

    #[test]
    fn decay_only_step() {
        let mut w = [2.0, -4.0];
        let mut v = [0.0; 2];
        sgd_step(&mut w, &[0.0; 2], &mut v, 0.1, 0.9, 0.01);
        assert!((w[0] - 2.0 * (1.0 - 0.1 * 0.01)).abs() < 1e-15);
        assert!((w[1] + 4.0 * (1.0 - 0.1 * 0.01)).abs() < 1e-15);
    }

    #[test]
    fn hand_step() {
        // v = 0.9 * 1 + 0.5 + 0.1 * 2 = 1.6, w = 2 - 0.5 * 1.6 = 1.2
        let mut w = [2.0];
        let mut v = [1.0];
        sgd_step(&mut w, &[0.5], &mut v, 0.5, 0.9, 0.1);
        assert!((v[0] - 1.6).abs() < 1e-15);
        assert!((w[0] - 1.2).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(cfg(0).validate(10).is_ok());
        assert!(cfg(10).validate(10).is_err());
        assert!(OptimizerConfig { momentum: 1.0, ..cfg(0) }.validate(10).is_err());
        assert!(OptimizerConfig { lr0: 0.0, ..cfg(0) }.validate(10).is_err());
    }
}
