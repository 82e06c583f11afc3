//! FLOP counts per example. One multiply-accumulate is two FLOPs, a
//! training step costs three forward passes, and a sparse conv/fc layer
//! does `density` of its dense multiply-accumulates. Activations, pooling
//! and the loss are not counted.

use alloc::vec::Vec;

use serde::Serialize;

use crate::error::{bail, Result};
use crate::mutation::MutationSchedule;
use crate::nn::{FeatureShape, LayerSpec};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LayerFlops {
    /// Index in the model's layer list.
    pub layer: usize,
    pub kind: &'static str,
    pub dense_macs: u64,
    pub density: f64,
    pub inference_flops: f64,
    pub training_flops: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FlopsReport {
    pub layers: Vec<LayerFlops>,
    pub inference_flops: f64,
    pub training_flops: f64,
    pub dense_training_flops: f64,
}

/// Dense multiply-accumulates of every conv/fc layer for one example, in
/// parameter order, with the owning layer index.
pub fn dense_macs(input: FeatureShape, layers: &[LayerSpec]) -> Result<Vec<(usize, u64)>> {
    let mut shape = input;
    let mut out = Vec::new();
    for (i, layer) in layers.iter().enumerate() {
        let next = layer.output(shape)?;
        match *layer {
            LayerSpec::Conv2d { filters, channels, kernel, .. } => {
                let k2 = (kernel * kernel) as u64;
                out.push((i, filters as u64 * channels as u64 * k2 * next.plane() as u64));
            }
            LayerSpec::Fc { inputs, outputs, .. } => out.push((i, inputs as u64 * outputs as u64)),
            _ => {}
        }
        shape = next;
    }
    Ok(out)
}

/// Per-example FLOPs with one density per conv/fc layer.
pub fn flops_report(input: FeatureShape, layers: &[LayerSpec], densities: &[f64]) -> Result<FlopsReport> {
    let macs = dense_macs(input, layers)?;
    if macs.len() != densities.len() {
        bail!(Shape, "{} densities for {} weighted layers", densities.len(), macs.len());
    }
    if densities.iter().any(|d| !(0.0..=1.0).contains(d)) {
        bail!(Config, "densities must lie in [0, 1]");
    }
    let rows: Vec<LayerFlops> = macs
        .iter()
        .zip(densities)
        .map(|(&(layer, m), &d)| {
            let inference = 2.0 * m as f64 * d;
            LayerFlops {
                layer,
                kind: layers[layer].name(),
                dense_macs: m,
                density: d,
                inference_flops: inference,
                training_flops: 3.0 * inference,
            }
        })
        .collect();
    Ok(FlopsReport {
        inference_flops: rows.iter().map(|r| r.inference_flops).sum(),
        training_flops: rows.iter().map(|r| r.training_flops).sum(),
        dense_training_flops: macs.iter().map(|&(_, m)| 6.0 * m as f64).sum(),
        layers: rows,
    })
}

/// Density of a layer with target sparsity `s`, averaged over every epoch
/// of the schedule (soft-bound windows train denser).
pub fn schedule_density(schedule: &MutationSchedule, s: f64) -> f64 {
    let total: f64 = (0..schedule.end).map(|tau| 1.0 - schedule.training_sparsity(tau, s)).sum();
    total / schedule.end.max(1) as f64
}
