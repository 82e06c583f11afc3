//! Run configuration, resumable training state and the per-epoch engine
//! wiring mutation, data-efficient compression and evaluation into SGD.

mod config;
mod engine;

pub use config::{
    DataEfficiency, DatasetConfig, DatasetSource, LayerScheme, ModelSpec, Precision, Preset, RunConfig, SynthConfig,
};
pub use engine::{EpochMetrics, MutationEvent, Trainer, TrainingState};
