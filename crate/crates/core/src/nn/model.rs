use alloc::vec;
use alloc::vec::Vec;

use super::layer::{FeatureShape, LayerSpec};
use super::reference::{self, dims};
use crate::error::{bail, Result};
use crate::kernels::{
    col2im, flatten_cols, gemm, gemm_backward, im2col, spmm, spmm_backward, unflatten_cols, GemmGrads,
    KernelConfig,
};
use crate::rng::{normal, stream, Purpose};
use crate::sparsity::{CompressedLayer, LayerShape, Mask, Scheme};
use crate::tensor::Tensor;

/// Weights of one conv/fc layer: a dense GEMM matrix or a compressed layer.
/// Either way `values()` is the flat array of trainable weights, and
/// gradients and optimizer state are stored aligned with it.
#[derive(Clone, Debug, PartialEq)]
pub enum WeightStore {
    Dense(Vec<f64>),
    Sparse(CompressedLayer),
}

impl WeightStore {
    pub fn values(&self) -> &[f64] {
        match self {
            WeightStore::Dense(w) => w,
            WeightStore::Sparse(cl) => cl.values(),
        }
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        match self {
            WeightStore::Dense(w) => w,
            WeightStore::Sparse(cl) => cl.values_mut(),
        }
    }

    pub fn nnz(&self) -> usize {
        match self {
            WeightStore::Dense(w) => w.len(),
            WeightStore::Sparse(cl) => cl.nnz(),
        }
    }

    pub fn scheme(&self) -> Option<Scheme> {
        match self {
            WeightStore::Dense(_) => None,
            WeightStore::Sparse(cl) => Some(cl.scheme()),
        }
    }

    pub fn compressed(&self) -> Option<&CompressedLayer> {
        match self {
            WeightStore::Sparse(cl) => Some(cl),
            WeightStore::Dense(_) => None,
        }
    }

    /// Dense GEMM-layout weights (zeros outside the mask).
    pub fn to_dense(&self) -> Vec<f64> {
        match self {
            WeightStore::Dense(w) => w.clone(),
            WeightStore::Sparse(cl) => cl.decode().0.into_data(),
        }
    }

    /// Scatters a value array aligned with this store into dense layout.
    pub fn scatter(&self, values: &[f64]) -> Vec<f64> {
        match self {
            WeightStore::Dense(_) => values.to_vec(),
            WeightStore::Sparse(cl) => {
                let mut dense = vec![0.0; cl.shape().weights()];
                cl.scatter(values, &mut dense);
                dense
            }
        }
    }
}

/// Trainable parameters of one conv/fc layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    /// Index of the owning layer in the model's layer list.
    pub layer: usize,
    pub shape: LayerShape,
    pub weights: WeightStore,
    /// Empty when the layer has no bias.
    pub bias: Vec<f64>,
}

/// Gradients aligned with the model's parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<Vec<f64>>,
}

#[derive(Clone, Debug)]
enum Saved {
    /// GEMM input matrix and its column count.
    Gemm(Vec<f64>, usize),
    Relu(Vec<f64>),
    MaxPool(Vec<u32>),
    Nothing,
}

/// Intermediate values kept by [`Model::forward`] for the backward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    batch: usize,
    saved: Vec<Saved>,
}

/// Loss, per-example correctness and gradients of one minibatch.
#[derive(Clone, Debug)]
pub struct StepOutput {
    pub loss: f64,
    pub correct: Vec<bool>,
    pub grads: Gradients,
}

/// A feed-forward network ending in a softmax cross-entropy loss.
/// Activations are channel-major `[C, B, H, W]` tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    input: FeatureShape,
    layers: Vec<LayerSpec>,
    shapes: Vec<FeatureShape>,
    params: Vec<Param>,
    pub kernel: KernelConfig,
}

impl Model {
    /// Builds a model with dense, zero-valued parameters.
    pub fn new(input: FeatureShape, layers: Vec<LayerSpec>) -> Result<Self> {
        let Some((LayerSpec::SoftmaxXent, body)) = layers.split_last() else {
            bail!(Config, "the last layer must be softmax-xent");
        };
        if body.contains(&LayerSpec::SoftmaxXent) {
            bail!(Config, "softmax-xent may only appear as the last layer");
        }
        let mut shapes = vec![input];
        let mut params = Vec::new();
        for (i, layer) in layers.iter().enumerate() {
            let out = layer.output(*shapes.last().expect("nonempty"))?;
            if let Some(shape) = layer.weight_shape() {
                params.push(Param {
                    layer: i,
                    shape,
                    weights: WeightStore::Dense(vec![0.0; shape.weights()]),
                    bias: vec![0.0; if layer.has_bias() { shape.filters } else { 0 }],
                });
            }
            shapes.push(out);
        }
        Ok(Self { input, layers, shapes, params, kernel: KernelConfig::default() })
    }

    pub fn input_shape(&self) -> FeatureShape {
        self.input
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    /// Per-example shape entering layer `i` (index `len` is the output).
    pub fn shape_at(&self, i: usize) -> FeatureShape {
        self.shapes[i]
    }

    pub fn classes(&self) -> usize {
        self.shapes[self.layers.len() - 1].channels
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn param_shapes(&self) -> Vec<LayerShape> {
        self.params.iter().map(|p| p.shape).collect()
    }

    /// Kaiming-normal weights (`std = sqrt(2 / fan_in)`) drawn densely per
    /// layer from the `Init` stream, zero biases. Compressed layers keep
    /// their topology and take the values at their active positions.
    pub fn init(&mut self, seed: u64) {
        for (i, p) in self.params.iter_mut().enumerate() {
            let mut rng = stream(seed, Purpose::Init, i as u64, 0);
            let std = libm::sqrt(2.0 / p.shape.cols() as f64);
            let dense: Vec<f64> = (0..p.shape.weights()).map(|_| std * normal(&mut rng)).collect();
            match &mut p.weights {
                WeightStore::Dense(w) => *w = dense,
                WeightStore::Sparse(cl) => {
                    let vals = cl.gather(&dense);
                    cl.values_mut().copy_from_slice(&vals);
                }
            }
            p.bias.iter_mut().for_each(|b| *b = 0.0);
        }
    }

    /// Switches parameter `param` to compressed storage with topology
    /// `mask`, keeping the current values at active positions.
    pub fn sparsify(&mut self, param: usize, mask: &Mask) -> Result<()> {
        let Some(p) = self.params.get_mut(param) else {
            bail!(Config, "no parameter layer {}", param);
        };
        if *mask.shape() != p.shape {
            bail!(Shape, "mask {:?} does not fit layer {:?}", mask.shape(), p.shape);
        }
        let dense = p.weights.to_dense();
        p.weights = WeightStore::Sparse(CompressedLayer::encode_fitting(&dense, mask, 64)?);
        Ok(())
    }

    pub fn nnz(&self) -> usize {
        self.params.iter().map(|p| p.weights.nnz()).sum()
    }

    fn check_input(&self, x: &Tensor) -> Result<usize> {
        let (c, b, h, w) = dims(x)?;
        if (c, h, w) != (self.input.channels, self.input.height, self.input.width) || b == 0 {
            bail!(Shape, "input {:?} does not match model input {:?}", x.shape(), self.input);
        }
        if !x.is_finite() {
            bail!(Numeric, "non-finite input");
        }
        Ok(b)
    }

    fn matmul(&self, p: &Param, x: &[f64], positions: usize) -> Result<Vec<f64>> {
        let bias = (!p.bias.is_empty()).then_some(p.bias.as_slice());
        match &p.weights {
            WeightStore::Dense(w) => gemm(w, p.shape.rows(), p.shape.cols(), x, positions, bias, &self.kernel),
            WeightStore::Sparse(cl) => spmm(cl, x, positions, bias, &self.kernel),
        }
    }

    fn matmul_backward(&self, p: &Param, delta: &[f64], x: &[f64], positions: usize) -> Result<GemmGrads> {
        match &p.weights {
            WeightStore::Dense(w) => gemm_backward(w, p.shape.rows(), p.shape.cols(), delta, x, positions, &self.kernel),
            WeightStore::Sparse(cl) => spmm_backward(cl, delta, x, positions, &self.kernel),
        }
    }

    /// Runs the network up to the logits (`[K, B, 1, 1]`).
    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, ForwardCache)> {
        let batch = self.check_input(x)?;
        let mut a = x.data().to_vec();
        let mut saved = Vec::with_capacity(self.layers.len());
        let mut param = 0;
        for (i, layer) in self.layers[..self.layers.len() - 1].iter().enumerate() {
            let input = self.shapes[i];
            let shape4 = [input.channels, batch, input.height, input.width];
            match layer {
                LayerSpec::Conv2d { .. } => {
                    let geom = layer.conv_geom(input, batch).expect("conv");
                    let cols = im2col(&a, &geom)?;
                    a = self.matmul(&self.params[param], &cols, geom.positions())?;
                    saved.push(Saved::Gemm(cols, geom.positions()));
                    param += 1;
                }
                LayerSpec::Fc { .. } => {
                    let xm = flatten_cols(&a, input.channels, batch, input.plane());
                    a = self.matmul(&self.params[param], &xm, batch)?;
                    saved.push(Saved::Gemm(xm, batch));
                    param += 1;
                }
                LayerSpec::Relu => {
                    a.iter_mut().for_each(|v| *v = super::layer::relu(*v));
                    saved.push(Saved::Relu(a.clone()));
                }
                LayerSpec::MaxPool { size } => {
                    let (y, arg) = reference::maxpool(&Tensor::new(shape4.to_vec(), a)?, *size)?;
                    a = y.into_data();
                    saved.push(Saved::MaxPool(arg));
                }
                LayerSpec::AvgPool { size } => {
                    a = reference::avgpool(&Tensor::new(shape4.to_vec(), a)?, *size)?.into_data();
                    saved.push(Saved::Nothing);
                }
                LayerSpec::SoftmaxXent => unreachable!("checked in Model::new"),
            }
        }
        let logits = Tensor::new(vec![self.classes(), batch, 1, 1], a)?;
        if !logits.is_finite() {
            bail!(Numeric, "non-finite logits");
        }
        Ok((logits, ForwardCache { batch, saved }))
    }

    /// Backpropagates `dlogits` through the cached forward pass.
    pub fn backward(&self, cache: &ForwardCache, dlogits: &Tensor) -> Result<Gradients> {
        let batch = cache.batch;
        if cache.saved.len() != self.layers.len() - 1 {
            bail!(State, "forward cache does not belong to this model");
        }
        if dlogits.shape() != [self.classes(), batch, 1, 1] {
            bail!(Shape, "logit gradient {:?} does not match the batch", dlogits.shape());
        }
        let mut grads = Gradients {
            weights: self.params.iter().map(|_| Vec::new()).collect(),
            bias: self.params.iter().map(|_| Vec::new()).collect(),
        };
        let mut delta = dlogits.data().to_vec();
        let mut param = self.params.len();
        for i in (0..self.layers.len() - 1).rev() {
            let input = self.shapes[i];
            let shape4 = [input.channels, batch, input.height, input.width];
            match (&self.layers[i], &cache.saved[i]) {
                (layer @ LayerSpec::Conv2d { .. }, Saved::Gemm(cols, positions)) => {
                    param -= 1;
                    let p = &self.params[param];
                    let g = self.matmul_backward(p, &delta, cols, *positions)?;
                    grads.weights[param] = g.weights;
                    grads.bias[param] = if p.bias.is_empty() { Vec::new() } else { g.bias };
                    if i > 0 {
                        delta = col2im(&g.input, &layer.conv_geom(input, batch).expect("conv"))?;
                    }
                }
                (LayerSpec::Fc { .. }, Saved::Gemm(xm, positions)) => {
                    param -= 1;
                    let p = &self.params[param];
                    let g = self.matmul_backward(p, &delta, xm, *positions)?;
                    grads.weights[param] = g.weights;
                    grads.bias[param] = if p.bias.is_empty() { Vec::new() } else { g.bias };
                    delta = unflatten_cols(&g.input, input.channels, batch, input.plane());
                }
                (LayerSpec::Relu, Saved::Relu(out)) => {
                    for (d, &o) in delta.iter_mut().zip(out) {
                        if o <= 0.0 {
                            *d = 0.0;
                        }
                    }
                }
                (LayerSpec::MaxPool { .. }, Saved::MaxPool(arg)) => {
                    let out = self.shapes[i + 1];
                    let dy = Tensor::new(vec![out.channels, batch, out.height, out.width], delta)?;
                    delta = reference::maxpool_backward(&dy, arg, &shape4)?.into_data();
                }
                (LayerSpec::AvgPool { size }, Saved::Nothing) => {
                    let out = self.shapes[i + 1];
                    let dy = Tensor::new(vec![out.channels, batch, out.height, out.width], delta)?;
                    delta = reference::avgpool_backward(&dy, *size, &shape4)?.into_data();
                }
                _ => bail!(State, "forward cache does not match layer {}", i),
            }
        }
        Ok(grads)
    }

    /// Forward, loss and backward on one labelled minibatch.
    pub fn loss_grad(&self, x: &Tensor, labels: &[usize]) -> Result<StepOutput> {
        let (logits, cache) = self.forward(x)?;
        let sx = reference::softmax_xent(&logits, labels)?;
        let grads = self.backward(&cache, &sx.grad)?;
        Ok(StepOutput { loss: sx.loss, correct: sx.correct, grads })
    }

    /// Mean loss and per-example correctness without gradients.
    pub fn evaluate(&self, x: &Tensor, labels: &[usize]) -> Result<(f64, Vec<bool>)> {
        let (logits, _) = self.forward(x)?;
        let sx = reference::softmax_xent(&logits, labels)?;
        Ok((sx.loss, sx.correct))
    }

    pub fn loss(&self, x: &Tensor, labels: &[usize]) -> Result<f64> {
        Ok(self.evaluate(x, labels)?.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::layer::Activation;
    use crate::sparsity::random_mask;

    fn tiny() -> Model {
        let layers = vec![
            LayerSpec::conv(4, 2, 3, 1),
            LayerSpec::Relu,
            LayerSpec::MaxPool { size: 2 },
            LayerSpec::conv(4, 4, 3, 1),
            LayerSpec::Relu,
            LayerSpec::AvgPool { size: 2 },
            LayerSpec::fc(4 * 2 * 2, 3),
            LayerSpec::SoftmaxXent,
        ];
        let mut m = Model::new(FeatureShape::new(2, 8, 8), layers).unwrap();
        m.init(5);
        m
    }

    fn batch(seed: f64) -> Tensor {
        Tensor::from_fn(&[2, 3, 8, 8], |i| libm::sin(i as f64 * 0.37 + seed))
    }

    #[test]
    fn requires_terminal_loss() {
        assert!(Model::new(FeatureShape::new(1, 4, 4), vec![LayerSpec::fc(16, 2)]).is_err());
        assert!(Model::new(
            FeatureShape::new(1, 4, 4),
            vec![LayerSpec::SoftmaxXent, LayerSpec::fc(16, 2), LayerSpec::SoftmaxXent]
        )
        .is_err());
    }

    #[test]
    fn forward_matches_reference_bitwise() {
        let mut m = tiny();
        let mask = random_mask(m.params()[1].shape, Scheme::Pattern, 0.8, 2).unwrap();
        m.sparsify(1, &mask).unwrap();
        let x = batch(0.0);
        let (logits, _) = m.forward(&x).unwrap();

        let p = m.params();
        let (_, a) = reference::forward(&m.layers()[0], &p[0].weights.to_dense(), &p[0].bias, &x, Activation::Relu).unwrap();
        let (a, _) = reference::maxpool(&a, 2).unwrap();
        let (_, a) = reference::forward(&m.layers()[3], &p[1].weights.to_dense(), &p[1].bias, &a, Activation::Relu).unwrap();
        let a = reference::avgpool(&a, 2).unwrap();
        let (z, _) = reference::forward(&m.layers()[6], &p[2].weights.to_dense(), &p[2].bias, &a, Activation::Identity).unwrap();
        assert_eq!(logits.data(), z.data());
    }

    #[test]
    fn gradients_match_reference_on_the_mask() {
        let mut m = tiny();
        let shape = m.params()[2].shape;
        let mask = random_mask(shape, Scheme::Unstructured, 0.5, 1).unwrap();
        m.sparsify(2, &mask).unwrap();
        let x = batch(1.0);
        let labels = [0, 2, 1];
        let out = m.loss_grad(&x, &labels).unwrap();

        // reference chain for the last layer only: its input and delta
        let p = m.params();
        let (_, a) = reference::forward(&m.layers()[0], &p[0].weights.to_dense(), &p[0].bias, &x, Activation::Relu).unwrap();
        let (a, _) = reference::maxpool(&a, 2).unwrap();
        let (_, a) = reference::forward(&m.layers()[3], &p[1].weights.to_dense(), &p[1].bias, &a, Activation::Relu).unwrap();
        let a = reference::avgpool(&a, 2).unwrap();
        let (z, _) = reference::forward(&m.layers()[6], &p[2].weights.to_dense(), &p[2].bias, &a, Activation::Identity).unwrap();
        let sx = reference::softmax_xent(&z, &labels).unwrap();
        let g = reference::weight_gradient(&m.layers()[6], &a, &sx.grad, Some(&mask)).unwrap();
        assert_eq!(p[2].weights.scatter(&out.grads.weights[2]), g.data());
        assert_eq!(out.grads.weights[2].len(), mask.nnz());
        assert_eq!(out.loss, sx.loss);
    }

    #[test]
    fn forward_is_deterministic() {
        let m = tiny();
        let x = batch(2.0);
        assert_eq!(m.forward(&x).unwrap().0, m.forward(&x).unwrap().0);
    }

    #[test]
    fn wrong_input_shape_is_rejected() {
        let m = tiny();
        assert!(matches!(m.forward(&Tensor::zeros(&[1, 3, 8, 8])), Err(crate::Error::Shape(_))));
    }
}
