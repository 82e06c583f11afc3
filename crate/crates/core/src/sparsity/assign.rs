//! Layer-wise sparsity ratios.
//!
//! `overall` is the weight-averaged sparsity over the sparsified layers;
//! dense-kept layers (scheme `None`) always get 0 and are excluded from the
//! average.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::scheme::Scheme;
use super::LayerShape;
use crate::error::{bail, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RatioStrategy {
    /// Every sparsified layer at `overall`.
    Uniform,
    /// 3x3 conv layers at `ratio` times the sparsity of all other layers.
    FixedRatio { ratio: f64 },
    /// Kept density proportional to `1 / sqrt(N_l)`, so larger layers are
    /// pruned harder.
    Proportional,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LayerSlot {
    pub shape: LayerShape,
    pub scheme: Option<Scheme>,
}

fn bounds(slot: &LayerSlot, scheme: Scheme) -> (f64, f64) {
    let n = slot.shape.weights() as f64;
    (scheme.min_sparsity(), 1.0 - 1.0 / n)
}

/// Finds `x` in `[lo, hi]` with `f(x) == target` for nondecreasing `f`.
fn bisect(mut lo: f64, mut hi: f64, target: f64, f: impl Fn(f64) -> f64) -> Result<f64> {
    let tol = 1e-12 * target.abs().max(1.0);
    if f(lo) > target + tol || f(hi) < target - tol {
        bail!(Feasibility, "overall sparsity cannot be reached within per-layer limits");
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

pub fn assign_layer_sparsity(
    layers: &[LayerSlot],
    strategy: RatioStrategy,
    overall: f64,
) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&overall) {
        bail!(Feasibility, "overall sparsity {} outside [0, 1)", overall);
    }
    let sparse: Vec<(usize, Scheme)> =
        layers.iter().enumerate().filter_map(|(i, l)| l.scheme.map(|s| (i, s))).collect();
    let mut out = vec![0.0; layers.len()];
    if sparse.is_empty() {
        if overall > 0.0 {
            bail!(Feasibility, "no sparsifiable layers for overall sparsity {}", overall);
        }
        return Ok(out);
    }
    let weights = |i: usize| layers[i].shape.weights() as f64;
    let total: f64 = sparse.iter().map(|&(i, _)| weights(i)).sum();
    match strategy {
        RatioStrategy::Uniform => {
            for &(i, scheme) in &sparse {
                let (lo, hi) = bounds(&layers[i], scheme);
                if overall < lo - 1e-12 || overall > hi {
                    bail!(Feasibility, "layer {} cannot hold sparsity {} ({})", i, overall, scheme.name());
                }
                out[i] = overall;
            }
        }
        RatioStrategy::FixedRatio { ratio } => {
            if ratio.is_nan() || ratio <= 0.0 {
                bail!(Config, "ratio must be positive, got {}", ratio);
            }
            let per_layer = |x: f64, i: usize, scheme: Scheme| {
                let (lo, hi) = bounds(&layers[i], scheme);
                let s = if layers[i].shape.kernel == 3 { ratio * x } else { x };
                s.clamp(lo, hi)
            };
            let mean = |x: f64| sparse.iter().map(|&(i, sc)| per_layer(x, i, sc) * weights(i)).sum::<f64>();
            let x = bisect(0.0, 1.0 / ratio.min(1.0), overall * total, mean)?;
            for &(i, scheme) in &sparse {
                out[i] = per_layer(x, i, scheme);
            }
        }
        RatioStrategy::Proportional => {
            let per_layer = |c: f64, i: usize, scheme: Scheme| {
                let (lo, hi) = bounds(&layers[i], scheme);
                let density = (c / libm::sqrt(weights(i))).clamp(1.0 - hi, 1.0 - lo);
                1.0 - density
            };
            // kept weights grow with c
            let kept = |c: f64| {
                sparse.iter().map(|&(i, sc)| (1.0 - per_layer(c, i, sc)) * weights(i)).sum::<f64>()
            };
            let c_max = sparse.iter().map(|&(i, _)| libm::sqrt(weights(i))).fold(0.0, f64::max);
            let c = bisect(0.0, c_max, (1.0 - overall) * total, kept)?;
            for &(i, scheme) in &sparse {
                out[i] = per_layer(c, i, scheme);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn slot(shape: LayerShape, scheme: Option<Scheme>) -> LayerSlot {
        LayerSlot { shape, scheme }
    }

    fn weighted_mean(layers: &[LayerSlot], s: &[f64]) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for (l, &v) in layers.iter().zip(s) {
            if l.scheme.is_some() {
                num += v * l.shape.weights() as f64;
                den += l.shape.weights() as f64;
            }
        }
        num / den
    }

    #[test]
    fn uniform_equal_layers() {
        let u = Some(Scheme::Unstructured);
        let layers = [slot(LayerShape::fc(10, 10), u), slot(LayerShape::fc(10, 10), u)];
        assert_eq!(assign_layer_sparsity(&layers, RatioStrategy::Uniform, 0.9).unwrap(), vec![0.9, 0.9]);
    }

    #[test]
    fn dense_kept_layers_stay_dense() {
        let layers = [
            slot(LayerShape::new(8, 1, 3), None),
            slot(LayerShape::new(16, 8, 3), Some(Scheme::Unstructured)),
        ];
        let s = assign_layer_sparsity(&layers, RatioStrategy::Uniform, 0.9).unwrap();
        assert_eq!(s, vec![0.0, 0.9]);
    }

    #[test]
    fn fixed_ratio_matches_hybrid_split() {
        // equal-sized 3x3 and 1x1 halves, ratio 1.12:1, overall 0.90
        let layers = [
            slot(LayerShape::new(64, 64, 3), Some(Scheme::Pattern)),
            slot(LayerShape::new(576, 64, 1), Some(Scheme::Block { m: 4, n: 1 })),
        ];
        let s = assign_layer_sparsity(&layers, RatioStrategy::FixedRatio { ratio: 1.12 }, 0.9).unwrap();
        assert!((s[0] - 0.95).abs() < 0.002, "{s:?}");
        assert!((s[1] - 0.85).abs() < 0.002, "{s:?}");
        assert!((s[0] / s[1] - 1.12).abs() < 1e-9);
        assert!((weighted_mean(&layers, &s) - 0.9).abs() < 1e-9);
    }

    #[test]
    fn proportional_closed_form() {
        let u = Some(Scheme::Unstructured);
        let layers = [slot(LayerShape::fc(100, 10), u), slot(LayerShape::fc(10, 10), u)];
        let s = assign_layer_sparsity(&layers, RatioStrategy::Proportional, 0.9).unwrap();
        // density = c / sqrt(N), sum density * N = 110  =>  c = 110 / (sqrt(1000) + sqrt(100))
        let c = 110.0 / (1000f64.sqrt() + 10.0);
        assert!((s[0] - (1.0 - c / 1000f64.sqrt())).abs() < 1e-9);
        assert!((s[1] - (1.0 - c / 10.0)).abs() < 1e-9);
        assert!(s[0] > s[1]);
        assert!((weighted_mean(&layers, &s) - 0.9).abs() < 1e-9);
    }

    #[test]
    fn proportional_clamps_and_redistributes() {
        let u = Some(Scheme::Unstructured);
        let layers = [slot(LayerShape::fc(1000, 100), u), slot(LayerShape::fc(2, 2), u)];
        let s = assign_layer_sparsity(&layers, RatioStrategy::Proportional, 0.2).unwrap();
        assert!(s.iter().all(|&v| (0.0..1.0).contains(&v)));
        assert!((weighted_mean(&layers, &s) - 0.2).abs() < 1e-9);
    }

    #[test]
    fn infeasible_requests_fail() {
        let layers = [slot(LayerShape::new(8, 8, 3), Some(Scheme::Pattern))];
        assert!(matches!(
            assign_layer_sparsity(&layers, RatioStrategy::Uniform, 0.5),
            Err(crate::Error::Feasibility(_))
        ));
        assert!(matches!(
            assign_layer_sparsity(&[slot(LayerShape::fc(4, 4), None)], RatioStrategy::Uniform, 0.5),
            Err(crate::Error::Feasibility(_))
        ));
    }
}
