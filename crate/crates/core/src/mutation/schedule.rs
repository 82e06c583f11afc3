use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MutationMode {
    /// Remove to `s + p`, then grow back to `s`, every `interval` epochs.
    Em,
    /// Grow to `s - p` at each window start and remove back to `s` at its
    /// end; windows run back to back until `stop`.
    EmSoft,
    /// [`MutationMode::Em`] with the first milestone's rate held constant.
    Vanilla,
    /// No mutation: the initial random mask is kept.
    Static,
}

/// What the mutation rate `p` is a fraction of.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateBasis {
    /// `p` is a fraction of all `N` weights: remove to `s + p`.
    #[default]
    Absolute,
    /// `p` is a fraction of the active weights: the sparsity offset is
    /// `p * (1 - s)`. Keeps high-sparsity runs feasible.
    Active,
}

/// One mutation step, as a target sparsity offset from the layer target.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Action {
    RemoveTo { target: f64 },
    GrowTo { target: f64 },
}

impl Action {
    pub fn target(&self) -> f64 {
        match *self {
            Action::RemoveTo { target } | Action::GrowTo { target } => target,
        }
    }
}

fn default_basis() -> RateBasis {
    RateBasis::Absolute
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MutationSchedule {
    pub mode: MutationMode,
    /// `(epoch, p)` pairs; `p(tau)` is the rate of the last milestone at or
    /// before `tau`.
    pub p_milestones: Vec<(usize, f64)>,
    /// Epochs between mutations (`delta tau`).
    pub interval: usize,
    /// Last epoch at which mutation may happen (`tau_stop`).
    pub stop: usize,
    /// Total epochs (`tau_end`).
    pub end: usize,
    /// Gradient coefficient of the importance score.
    pub lambda: f64,
    #[serde(default = "default_basis")]
    pub rate_basis: RateBasis,
}

impl MutationSchedule {
    /// The CIFAR schedule: `p = 0.05` until epoch 100, `0.025` until the
    /// stop at 130, 160 epochs total, mutation every 5 epochs.
    pub fn cifar(mode: MutationMode) -> Self {
        Self {
            mode,
            p_milestones: vec![(0, 0.05), (100, 0.025)],
            interval: 5,
            stop: 130,
            end: 160,
            lambda: 0.01,
            rate_basis: RateBasis::Absolute,
        }
    }

    pub fn static_mask(end: usize) -> Self {
        Self {
            mode: MutationMode::Static,
            p_milestones: vec![(0, 0.0)],
            interval: 1,
            stop: 0,
            end,
            lambda: 0.0,
            rate_basis: RateBasis::Absolute,
        }
    }

    /// Checks the schedule against the sparsest and densest layer targets
    /// it will be applied to.
    pub fn validate(&self, targets: &[f64]) -> Result<()> {
        if self.end == 0 {
            bail!(Config, "schedule needs at least one epoch");
        }
        if self.mode == MutationMode::Static {
            return Ok(());
        }
        if self.interval == 0 {
            bail!(Config, "mutation interval must be at least 1");
        }
        if self.stop >= self.end {
            bail!(Config, "mutation stop {} must precede the end {}", self.stop, self.end);
        }
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            bail!(Config, "lambda must be a nonnegative number, got {}", self.lambda);
        }
        let Some(&(first, _)) = self.p_milestones.first() else {
            bail!(Config, "at least one p milestone is required");
        };
        if first != 0 {
            bail!(Config, "the first p milestone must be at epoch 0, got {}", first);
        }
        for w in self.p_milestones.windows(2) {
            if w[1].0 <= w[0].0 {
                bail!(Config, "p milestones must have ascending epochs");
            }
            if w[1].1 > w[0].1 {
                bail!(Config, "p may only decay: {} then {}", w[0].1, w[1].1);
            }
        }
        for &(_, p) in &self.p_milestones {
            if !(p > 0.0 && p < 1.0) {
                bail!(Config, "mutation rate must be in (0, 1), got {}", p);
            }
        }
        for &s in targets {
            let p = self.offset(0, s);
            match self.mode {
                MutationMode::Em | MutationMode::Vanilla if s + p > 1.0 => {
                    bail!(Feasibility, "s + p = {} exceeds 1", s + p)
                }
                MutationMode::EmSoft if s - p < 0.0 => bail!(Feasibility, "s - p = {} is negative", s - p),
                _ => {}
            }
        }
        Ok(())
    }

    /// Configured rate at epoch `tau`.
    pub fn p_at(&self, tau: usize) -> f64 {
        if self.mode == MutationMode::Vanilla {
            return self.p_milestones.first().map_or(0.0, |m| m.1);
        }
        self.p_milestones.iter().take_while(|m| m.0 <= tau).last().map_or(0.0, |m| m.1)
    }

    /// Sparsity offset applied to a layer with target `s` at epoch `tau`.
    pub fn offset(&self, tau: usize, s: f64) -> f64 {
        let p = self.p_at(tau);
        match self.rate_basis {
            RateBasis::Absolute => p,
            RateBasis::Active => p * (1.0 - s),
        }
    }

    /// Mutation steps at the start of epoch `tau` for a layer with target
    /// sparsity `s`.
    pub fn actions_at(&self, tau: usize, s: f64) -> Vec<Action> {
        let boundary = tau.is_multiple_of(self.interval.max(1));
        match self.mode {
            MutationMode::Static => Vec::new(),
            MutationMode::Em | MutationMode::Vanilla => {
                if boundary && tau < self.stop {
                    vec![Action::RemoveTo { target: s + self.offset(tau, s) }, Action::GrowTo { target: s }]
                } else {
                    Vec::new()
                }
            }
            MutationMode::EmSoft => {
                let mut out = Vec::new();
                if (boundary && tau > 0 && tau < self.stop) || tau == self.stop {
                    out.push(Action::RemoveTo { target: s });
                }
                if boundary && tau < self.stop {
                    out.push(Action::GrowTo { target: s - self.offset(tau, s) });
                }
                out
            }
        }
    }

    /// Sparsity a layer with target `s` trains at during epoch `tau`.
    pub fn training_sparsity(&self, tau: usize, s: f64) -> f64 {
        match self.mode {
            MutationMode::EmSoft if tau < self.stop => {
                let start = tau - tau % self.interval.max(1);
                s - self.offset(start, s)
            }
            _ => s,
        }
    }

    /// Whether any mutation happens at epoch `tau`.
    pub fn mutates_at(&self, tau: usize) -> bool {
        !self.actions_at(tau, 0.5).is_empty()
    }
}
