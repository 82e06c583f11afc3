use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::data::Normalization;
use crate::error::{bail, Result};
use crate::kernels::KernelConfig;
use crate::mutation::MutationSchedule;
use crate::nn::{FeatureShape, LayerSpec};
use crate::optim::OptimizerConfig;
use crate::sparsity::{assign_layer_sparsity, BitWidths, LayerShape, LayerSlot, RatioStrategy, Scheme};

/// Built-in networks, sized from the dataset's image shape and classes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// Two 3x3 conv layers (8 and 16 filters) with 2x2 max pooling, then
    /// fc to 64 and fc to the classes. Needs sides divisible by 4.
    TinyCnn,
    /// Five 3x3 conv layers (16, 16, 32, 32, 64 filters) in three pooled
    /// stages, then fc to the classes. Needs sides divisible by 8.
    VggSlim,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelSpec {
    Preset(Preset),
    Layers { layers: Vec<LayerSpec> },
}

impl ModelSpec {
    pub fn layers(&self, input: FeatureShape, classes: usize) -> Result<Vec<LayerSpec>> {
        let FeatureShape { channels: c, height: h, width: w } = input;
        let conv = |f, ch| LayerSpec::conv(f, ch, 3, 1);
        let pool = LayerSpec::MaxPool { size: 2 };
        match self {
            ModelSpec::Layers { layers } => Ok(layers.clone()),
            ModelSpec::Preset(Preset::TinyCnn) => {
                if h % 4 != 0 || w % 4 != 0 {
                    bail!(Config, "tiny-cnn needs image sides divisible by 4, got {}x{}", h, w);
                }
                Ok(vec![
                    conv(8, c),
                    LayerSpec::Relu,
                    pool,
                    conv(16, 8),
                    LayerSpec::Relu,
                    pool,
                    LayerSpec::fc(16 * (h / 4) * (w / 4), 64),
                    LayerSpec::Relu,
                    LayerSpec::fc(64, classes),
                    LayerSpec::SoftmaxXent,
                ])
            }
            ModelSpec::Preset(Preset::VggSlim) => {
                if h % 8 != 0 || w % 8 != 0 {
                    bail!(Config, "vgg-slim needs image sides divisible by 8, got {}x{}", h, w);
                }
                Ok(vec![
                    conv(16, c),
                    LayerSpec::Relu,
                    conv(16, 16),
                    LayerSpec::Relu,
                    pool,
                    conv(32, 16),
                    LayerSpec::Relu,
                    conv(32, 32),
                    LayerSpec::Relu,
                    pool,
                    conv(64, 32),
                    LayerSpec::Relu,
                    pool,
                    LayerSpec::fc(64 * (h / 8) * (w / 8), classes),
                    LayerSpec::SoftmaxXent,
                ])
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetSource {
    Mnist,
    Cifar10,
    Synth,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub train: usize,
    pub test: usize,
    pub classes: usize,
    pub channels: usize,
    pub size: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self { train: 512, test: 256, classes: 4, channels: 1, size: 12 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub source: DatasetSource,
    /// Use only the first `n` training examples.
    #[serde(default)]
    pub train_limit: Option<usize>,
    #[serde(default)]
    pub test_limit: Option<usize>,
    /// Pad-and-crop plus flip augmentation of training batches.
    #[serde(default)]
    pub augment: bool,
    #[serde(default)]
    pub synth: SynthConfig,
}

impl DatasetConfig {
    /// Image shape and class count of the configured source.
    pub fn geometry(&self) -> (FeatureShape, usize) {
        match self.source {
            DatasetSource::Mnist => (FeatureShape::new(1, 28, 28), 10),
            DatasetSource::Cifar10 => (FeatureShape::new(3, 32, 32), 10),
            DatasetSource::Synth => {
                let s = &self.synth;
                (FeatureShape::new(s.channels, s.size, s.size), s.classes)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataEfficiency {
    pub enabled: bool,
    /// Phase-1 epochs; defaults to 40% of the run.
    #[serde(default)]
    pub e1: Option<usize>,
    /// Forgetting threshold; `-1` removes nothing.
    #[serde(default)]
    pub th: i64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    /// Weights, biases and momentum are rounded to `f32` after every step.
    F32,
    #[default]
    F64,
}

/// Scheme override for one parameter layer (hybrid assignment).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerScheme {
    pub param: usize,
    pub scheme: Scheme,
}

fn default_scheme() -> Scheme {
    Scheme::Unstructured
}

fn default_strategy() -> RatioStrategy {
    RatioStrategy::Uniform
}

fn first_layer() -> Vec<usize> {
    vec![0]
}

fn default_eval_batch() -> usize {
    256
}

/// One training run. Parameter layers (conv and fc) are numbered in model
/// order from 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: ModelSpec,
    pub dataset: DatasetConfig,
    #[serde(default = "default_scheme")]
    pub scheme: Scheme,
    #[serde(default)]
    pub layer_schemes: Vec<LayerScheme>,
    /// Parameter layers kept dense.
    #[serde(default = "first_layer")]
    pub dense_layers: Vec<usize>,
    /// Overall sparsity of the sparsified layers.
    pub sparsity: f64,
    #[serde(default = "default_strategy")]
    pub strategy: RatioStrategy,
    pub mutation: MutationSchedule,
    #[serde(default)]
    pub data_efficiency: DataEfficiency,
    pub optimizer: OptimizerConfig,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    #[serde(default)]
    pub precision: Precision,
    #[serde(default)]
    pub widths: BitWidths,
    /// Write a checkpoint every `n` epochs (0: only at the end).
    #[serde(default)]
    pub checkpoint_every: usize,
    #[serde(default)]
    pub kernel: KernelConfig,
    #[serde(default = "default_eval_batch")]
    pub eval_batch: usize,
    /// Per-channel statistics of the training split, filled in on load.
    #[serde(default)]
    pub normalization: Option<Normalization>,
}

impl RunConfig {
    /// Scheme of every parameter layer, `None` for dense-kept ones.
    pub fn schemes(&self, params: usize) -> Result<Vec<Option<Scheme>>> {
        for &d in &self.dense_layers {
            if d >= params {
                bail!(Config, "dense layer {} does not exist ({} parameter layers)", d, params);
            }
        }
        let mut out: Vec<Option<Scheme>> =
            (0..params).map(|i| (!self.dense_layers.contains(&i)).then_some(self.scheme)).collect();
        for o in &self.layer_schemes {
            if o.param >= params {
                bail!(Config, "scheme override for missing layer {}", o.param);
            }
            if self.dense_layers.contains(&o.param) {
                bail!(Config, "layer {} is both dense and given a scheme", o.param);
            }
            out[o.param] = Some(o.scheme);
        }
        Ok(out)
    }

    /// Target sparsity of every parameter layer (0 for dense ones).
    pub fn targets(&self, shapes: &[LayerShape]) -> Result<Vec<f64>> {
        let schemes = self.schemes(shapes.len())?;
        let slots: Vec<LayerSlot> =
            shapes.iter().zip(&schemes).map(|(&shape, &scheme)| LayerSlot { shape, scheme }).collect();
        for slot in &slots {
            if let Some(scheme) = slot.scheme {
                scheme.validate(&slot.shape)?;
            }
        }
        assign_layer_sparsity(&slots, self.strategy, self.sparsity)
    }

    /// Phase-1 length of data-efficient training.
    pub fn e1(&self) -> usize {
        self.data_efficiency
            .e1
            .unwrap_or_else(|| crate::sparsity::round_half_up(0.4 * self.epochs as f64).clamp(1, self.epochs.max(2) - 1))
    }

    /// Checks everything that does not depend on the dataset.
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.eval_batch == 0 {
            bail!(Config, "epochs, batch_size and eval_batch must be positive");
        }
        if self.mutation.end != self.epochs {
            bail!(Config, "mutation end {} differs from epochs {}", self.mutation.end, self.epochs);
        }
        self.optimizer.validate(self.epochs)?;
        self.kernel.validate()?;
        if self.data_efficiency.enabled {
            let e1 = self.e1();
            if e1 == 0 || e1 >= self.epochs {
                bail!(Config, "phase-1 length {} must lie in 1..{}", e1, self.epochs);
            }
            if self.data_efficiency.th < -1 {
                bail!(Config, "forgetting threshold must be at least -1");
            }
        }
        Ok(())
    }
}
