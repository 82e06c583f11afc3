use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::ops::{arg_grow_to, arg_remove_to, importance};
use super::schedule::Action;
use crate::error::Result;
use crate::sparsity::CompressedLayer;

/// Result of mutating one compressed layer.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerMutation {
    pub layer: CompressedLayer,
    /// Last gradient, remapped to the new topology.
    pub grad: Vec<f64>,
    /// Companion arrays (e.g. momentum), remapped to the new topology.
    pub aligned: Vec<Vec<f64>>,
    /// Nonzero count after each action.
    pub nnz_trace: Vec<usize>,
}

/// Applies `actions` to a compressed layer. Removal scores use the stored
/// weights and `grad` (aligned with the layer's value slots). Removed
/// weights and their companion entries are dropped; grown weights and
/// their companion entries start at zero. The result is re-encoded with
/// 64-bit values and the narrowest index width that fits.
pub fn mutate_layer<R: Rng + ?Sized>(
    layer: &CompressedLayer,
    grad: &[f64],
    aligned: &[&[f64]],
    actions: &[Action],
    lambda: f64,
    rng: &mut R,
) -> Result<LayerMutation> {
    let n = layer.shape().weights();
    let (w, mut mask) = layer.decode();
    let mut w = w.into_data();
    let scatter = |values: &[f64]| {
        let mut dense = vec![0.0; n];
        layer.scatter(values, &mut dense);
        dense
    };
    let mut g = scatter(grad);
    let mut aux: Vec<Vec<f64>> = aligned.iter().map(|v| scatter(v)).collect();
    let mut nnz_trace = Vec::with_capacity(actions.len());
    for action in actions {
        let next = match *action {
            Action::RemoveTo { target } => arg_remove_to(&mask, &importance(&w, &g, lambda)?, target)?,
            Action::GrowTo { target } => arg_grow_to(&mask, target, rng)?,
        };
        for (i, (&was, &now)) in mask.bits().iter().zip(next.bits()).enumerate() {
            if was != now {
                w[i] = 0.0;
                g[i] = 0.0;
                aux.iter_mut().for_each(|a| a[i] = 0.0);
            }
        }
        mask = next;
        nnz_trace.push(mask.nnz());
    }
    let layer = CompressedLayer::encode_fitting(&w, &mask, 64)?;
    let grad = layer.gather(&g);
    let aligned = aux.iter().map(|a| layer.gather(a)).collect();
    Ok(LayerMutation { layer, grad, aligned, nnz_trace })
}
