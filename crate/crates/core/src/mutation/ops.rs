use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{bail, Result};
use crate::sparsity::{Mask, Scheme, PATTERN_STYLES};

/// Importance score `|w| + |lambda * g|` per weight.
pub fn importance(weights: &[f64], grads: &[f64], lambda: f64) -> Result<Vec<f64>> {
    if weights.len() != grads.len() {
        bail!(Shape, "{} weights but {} gradients", weights.len(), grads.len());
    }
    if !lambda.is_finite() {
        bail!(Numeric, "non-finite lambda {}", lambda);
    }
    weights
        .iter()
        .zip(grads)
        .map(|(&w, &g)| {
            let s = libm::fabs(w) + libm::fabs(lambda * g);
            if s.is_finite() {
                Ok(s)
            } else {
                bail!(Numeric, "non-finite importance from w = {}, g = {}", w, g)
            }
        })
        .collect()
}

/// Sum of `scores` over the active positions of each listed unit.
fn unit_scores(mask: &Mask, scores: &[f64], units: &[usize]) -> Vec<f64> {
    let mut pos = Vec::new();
    units
        .iter()
        .map(|&u| {
            mask.active_positions(u, &mut pos);
            pos.iter().fold(0.0, |acc, &i| acc + scores[i])
        })
        .collect()
}

/// Lowest-scoring `count` units among `units`; ties go to the lower unit.
fn lowest(units: &[usize], sums: &[f64], count: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..units.len()).collect();
    idx.sort_by(|&a, &b| sums[a].total_cmp(&sums[b]).then(units[a].cmp(&units[b])));
    idx[..count].iter().map(|&i| units[i]).collect()
}

/// Removes the least important active units until the layer is at
/// sparsity `t` (rounded at the scheme granularity). `scores` holds one
/// score per dense weight position; a unit's score is the sum over its
/// active weights. Pattern layers remove the same number of kernels from
/// every filter.
pub fn arg_remove_to(mask: &Mask, scores: &[f64], t: f64) -> Result<Mask> {
    let shape = *mask.shape();
    let scheme = mask.scheme();
    if scores.len() != shape.weights() {
        bail!(Shape, "{} scores for {} weights", scores.len(), shape.weights());
    }
    let target = scheme.kept_units(&shape, t)?;
    let mut out = mask.clone();
    match scheme {
        Scheme::Pattern => {
            let keep = target / shape.filters;
            for f in 0..shape.filters {
                let units: Vec<usize> =
                    (f * shape.channels..(f + 1) * shape.channels).filter(|&u| mask.is_unit_active(u)).collect();
                if keep > units.len() {
                    bail!(Feasibility, "filter {} holds {} kernels, cannot remove to {}", f, units.len(), keep);
                }
                let sums = unit_scores(mask, scores, &units);
                for u in lowest(&units, &sums, units.len() - keep) {
                    out.set_unit(u, false, 0);
                }
            }
        }
        _ => {
            let units = mask.active_units();
            if target > units.len() {
                bail!(
                    Feasibility,
                    "layer holds {} active units, cannot remove to {} (sparsity {})",
                    units.len(),
                    target,
                    t
                );
            }
            let sums = unit_scores(mask, scores, &units);
            for u in lowest(&units, &sums, units.len() - target) {
                out.set_unit(u, false, 0);
            }
        }
    }
    Ok(out)
}

/// Activates uniformly chosen empty units until the layer is at sparsity
/// `t`. Pattern layers grow the same number of kernels in every filter,
/// each with a uniformly drawn style. The caller initializes grown weights
/// to zero.
pub fn arg_grow_to<R: Rng + ?Sized>(mask: &Mask, t: f64, rng: &mut R) -> Result<Mask> {
    let shape = *mask.shape();
    let scheme = mask.scheme();
    let target = scheme.kept_units(&shape, t)?;
    let mut out = mask.clone();
    match scheme {
        Scheme::Pattern => {
            let keep = target / shape.filters;
            for f in 0..shape.filters {
                let range = f * shape.channels..(f + 1) * shape.channels;
                let active = range.clone().filter(|&u| mask.is_unit_active(u)).count();
                if keep < active {
                    bail!(Feasibility, "filter {} holds {} kernels, cannot grow to {}", f, active, keep);
                }
                let mut empty: Vec<usize> = range.filter(|&u| !mask.is_unit_active(u)).collect();
                let (chosen, _) = empty.partial_shuffle(rng, keep - active);
                let mut chosen = chosen.to_vec();
                chosen.sort_unstable();
                for u in chosen {
                    let style = rng.random_range(0..PATTERN_STYLES as u8);
                    out.set_unit(u, true, style);
                }
            }
        }
        _ => {
            let units = scheme.unit_count(&shape);
            let active = mask.active_unit_count();
            if target < active {
                bail!(Feasibility, "layer holds {} active units, cannot grow to {}", active, target);
            }
            let mut empty: Vec<usize> = (0..units).filter(|&u| !mask.is_unit_active(u)).collect();
            if empty.len() < target - active {
                bail!(Feasibility, "only {} empty units for {} new ones", empty.len(), target - active);
            }
            let (chosen, _) = empty.partial_shuffle(rng, target - active);
            for &u in chosen.iter() {
                out.set_unit(u, true, 0);
            }
        }
    }
    Ok(out)
}
