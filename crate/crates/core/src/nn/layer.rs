use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::kernels::ConvGeom;
use crate::sparsity::LayerShape;

/// Per-example feature map geometry.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FeatureShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl FeatureShape {
    pub const fn new(channels: usize, height: usize, width: usize) -> Self {
        Self { channels, height, width }
    }

    pub const fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub const fn plane(&self) -> usize {
        self.height * self.width
    }
}

fn one() -> usize {
    1
}

fn yes() -> bool {
    true
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum LayerSpec {
    #[serde(rename = "conv2d")]
    Conv2d {
        filters: usize,
        channels: usize,
        kernel: usize,
        #[serde(default = "one")]
        stride: usize,
        #[serde(default)]
        padding: usize,
        #[serde(default = "yes")]
        bias: bool,
    },
    #[serde(rename = "fc")]
    Fc {
        inputs: usize,
        outputs: usize,
        #[serde(default = "yes")]
        bias: bool,
    },
    #[serde(rename = "relu")]
    Relu,
    #[serde(rename = "maxpool")]
    MaxPool { size: usize },
    #[serde(rename = "avgpool")]
    AvgPool { size: usize },
    #[serde(rename = "softmax-xent")]
    SoftmaxXent,
}

/// Elementwise activation applied after a weighted layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
}

impl Activation {
    pub fn apply(&self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Relu => relu(z),
        }
    }

    /// Derivative; the ReLU derivative at exactly 0 is 0.
    pub fn derivative(&self, z: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[inline]
pub(crate) fn relu(z: f64) -> f64 {
    if z > 0.0 {
        z
    } else {
        0.0
    }
}

impl LayerSpec {
    pub fn conv(filters: usize, channels: usize, kernel: usize, padding: usize) -> Self {
        LayerSpec::Conv2d { filters, channels, kernel, stride: 1, padding, bias: true }
    }

    pub fn fc(inputs: usize, outputs: usize) -> Self {
        LayerSpec::Fc { inputs, outputs, bias: true }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::Fc { .. } => "fc",
            LayerSpec::Relu => "relu",
            LayerSpec::MaxPool { .. } => "maxpool",
            LayerSpec::AvgPool { .. } => "avgpool",
            LayerSpec::SoftmaxXent => "softmax-xent",
        }
    }

    /// Weight geometry of conv and fc layers.
    pub fn weight_shape(&self) -> Option<LayerShape> {
        match *self {
            LayerSpec::Conv2d { filters, channels, kernel, .. } => Some(LayerShape::new(filters, channels, kernel)),
            LayerSpec::Fc { inputs, outputs, .. } => Some(LayerShape::fc(inputs, outputs)),
            _ => None,
        }
    }

    pub fn has_bias(&self) -> bool {
        matches!(self, LayerSpec::Conv2d { bias: true, .. } | LayerSpec::Fc { bias: true, .. })
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            LayerSpec::Conv2d { filters, channels, kernel, stride, .. } => {
                filters > 0 && channels > 0 && kernel > 0 && stride > 0
            }
            LayerSpec::Fc { inputs, outputs, .. } => inputs > 0 && outputs > 0,
            LayerSpec::MaxPool { size } | LayerSpec::AvgPool { size } => size > 0,
            LayerSpec::Relu | LayerSpec::SoftmaxXent => true,
        };
        if !ok {
            bail!(Shape, "{} layer has a zero dimension: {:?}", self.name(), self);
        }
        Ok(())
    }

    /// Convolution geometry for a batch of `batch` inputs of shape `input`.
    pub fn conv_geom(&self, input: FeatureShape, batch: usize) -> Option<ConvGeom> {
        match *self {
            LayerSpec::Conv2d { channels, kernel, stride, padding, .. } => Some(ConvGeom {
                channels,
                batch,
                height: input.height,
                width: input.width,
                kernel,
                stride,
                padding,
            }),
            _ => None,
        }
    }

    /// Per-example output shape for an input of shape `input`.
    pub fn output(&self, input: FeatureShape) -> Result<FeatureShape> {
        self.validate()?;
        match *self {
            LayerSpec::Conv2d { filters, channels, .. } => {
                if input.channels != channels {
                    bail!(Shape, "conv2d expects {} channels, got {}", channels, input.channels);
                }
                let g = self.conv_geom(input, 1).expect("conv");
                g.validate()?;
                Ok(FeatureShape::new(filters, g.out_h(), g.out_w()))
            }
            LayerSpec::Fc { inputs, outputs, .. } => {
                if input.len() != inputs {
                    bail!(Shape, "fc expects {} inputs, got {} ({:?})", inputs, input.len(), input);
                }
                Ok(FeatureShape::new(outputs, 1, 1))
            }
            LayerSpec::Relu => Ok(input),
            LayerSpec::MaxPool { size } | LayerSpec::AvgPool { size } => {
                if input.height < size || input.width < size {
                    bail!(Shape, "pool window {} larger than {}x{}", size, input.height, input.width);
                }
                Ok(FeatureShape::new(input.channels, input.height / size, input.width / size))
            }
            LayerSpec::SoftmaxXent => {
                if input.plane() != 1 {
                    bail!(Shape, "softmax-xent expects flat logits, got {:?}", input);
                }
                Ok(FeatureShape::new(1, 1, 1))
            }
        }
    }
}
