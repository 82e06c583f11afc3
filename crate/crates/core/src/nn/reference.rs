//! Direct-loop dense operators over channel-major `[C, B, H, W]` tensors.
//!
//! These are written independently of the im2col/GEMM kernels and serve as
//! their oracle. Every sum runs in the same fixed order as the kernels:
//! from zero over `(channel, kh, kw)` ascending with padded taps read as
//! zero, bias last; weight gradients over `(batch, oy, ox)` ascending.

use alloc::vec;
use alloc::vec::Vec;

use super::layer::{relu, Activation, FeatureShape, LayerSpec};
use crate::error::{bail, Result};
use crate::sparsity::Mask;
use crate::tensor::Tensor;

/// `(C, B, H, W)` of a 4-D activation tensor.
pub fn dims(t: &Tensor) -> Result<(usize, usize, usize, usize)> {
    match *t.shape() {
        [c, b, h, w] => Ok((c, b, h, w)),
        ref s => bail!(Shape, "expected a [C, B, H, W] tensor, got shape {:?}", s),
    }
}

fn tensor4(c: usize, b: usize, h: usize, w: usize, data: Vec<f64>) -> Tensor {
    Tensor::new(vec![c, b, h, w], data).expect("shape matches data")
}

fn check_weights(layer: &LayerSpec, w: &[f64], bias: &[f64]) -> Result<()> {
    let shape = layer.weight_shape().expect("weighted layer");
    if w.len() != shape.weights() {
        bail!(Shape, "{} weights for a {:?} layer", w.len(), shape);
    }
    if !bias.is_empty() && bias.len() != shape.filters {
        bail!(Shape, "{} biases for {} outputs", bias.len(), shape.filters);
    }
    Ok(())
}

/// Direct convolution; `bias` may be empty.
pub fn conv2d(layer: &LayerSpec, w: &[f64], bias: &[f64], x: &Tensor) -> Result<Tensor> {
    let LayerSpec::Conv2d { filters, kernel: k, stride, padding, .. } = *layer else {
        bail!(Config, "conv2d called with a {} layer", layer.name());
    };
    check_weights(layer, w, bias)?;
    let (c_in, batch, h, wd) = dims(x)?;
    let out = layer.output(FeatureShape::new(c_in, h, wd))?;
    let (oh, ow) = (out.height, out.width);
    let xd = x.data();
    let mut z = vec![0.0; filters * batch * oh * ow];
    for f in 0..filters {
        for b in 0..batch {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0;
                    for c in 0..c_in {
                        for kh in 0..k {
                            for kw in 0..k {
                                let iy = (oy * stride + kh) as isize - padding as isize;
                                let ix = (ox * stride + kw) as isize - padding as isize;
                                let v = if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                    xd[((c * batch + b) * h + iy as usize) * wd + ix as usize]
                                } else {
                                    0.0
                                };
                                acc += w[((f * c_in + c) * k + kh) * k + kw] * v;
                            }
                        }
                    }
                    if !bias.is_empty() {
                        acc += bias[f];
                    }
                    z[((f * batch + b) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    Ok(tensor4(filters, batch, oh, ow, z))
}

/// Gradient of a convolution with respect to its input (transposed
/// convolution with the full-padded, 180-degree rotated kernel).
pub fn conv2d_input_grad(layer: &LayerSpec, w: &[f64], dz: &Tensor, input: FeatureShape) -> Result<Tensor> {
    let LayerSpec::Conv2d { filters, channels, kernel: k, stride, padding, .. } = *layer else {
        bail!(Config, "conv2d_input_grad called with a {} layer", layer.name());
    };
    check_weights(layer, w, &[])?;
    let out = layer.output(input)?;
    let (f_out, batch, oh, ow) = dims(dz)?;
    if f_out != filters || oh != out.height || ow != out.width {
        bail!(Shape, "delta shape {:?} does not match conv output {:?}", dz.shape(), out);
    }
    let (h, wd) = (input.height, input.width);
    let dzd = dz.data();
    let mut dx = vec![0.0; channels * batch * h * wd];
    for c in 0..channels {
        for kh in 0..k {
            for kw in 0..k {
                for b in 0..batch {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let mut s = 0.0;
                            for f in 0..filters {
                                s += w[((f * channels + c) * k + kh) * k + kw] * dzd[((f * batch + b) * oh + oy) * ow + ox];
                            }
                            let iy = (oy * stride + kh) as isize - padding as isize;
                            let ix = (ox * stride + kw) as isize - padding as isize;
                            if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                dx[((c * batch + b) * h + iy as usize) * wd + ix as usize] += s;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(tensor4(channels, batch, h, wd, dx))
}

/// Dense gradient of a convolution's weights, `[F, Ch, K, K]`.
pub fn conv2d_weight_grad(layer: &LayerSpec, x: &Tensor, dz: &Tensor) -> Result<Tensor> {
    let LayerSpec::Conv2d { filters, channels, kernel: k, stride, padding, .. } = *layer else {
        bail!(Config, "conv2d_weight_grad called with a {} layer", layer.name());
    };
    let (c_in, batch, h, wd) = dims(x)?;
    let out = layer.output(FeatureShape::new(c_in, h, wd))?;
    let (oh, ow) = (out.height, out.width);
    if dims(dz)? != (filters, batch, oh, ow) {
        bail!(Shape, "delta shape {:?} does not match conv output", dz.shape());
    }
    let (xd, dzd) = (x.data(), dz.data());
    let mut g = vec![0.0; filters * channels * k * k];
    for f in 0..filters {
        for c in 0..channels {
            for kh in 0..k {
                for kw in 0..k {
                    let mut acc = 0.0;
                    for b in 0..batch {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let iy = (oy * stride + kh) as isize - padding as isize;
                                let ix = (ox * stride + kw) as isize - padding as isize;
                                let v = if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                    xd[((c * batch + b) * h + iy as usize) * wd + ix as usize]
                                } else {
                                    0.0
                                };
                                acc += dzd[((f * batch + b) * oh + oy) * ow + ox] * v;
                            }
                        }
                    }
                    g[((f * channels + c) * k + kh) * k + kw] = acc;
                }
            }
        }
    }
    Ok(Tensor::new(vec![filters, channels, k, k], g).expect("shape matches"))
}

/// Input value of example `b` at flat feature index `i` (`c, y, x` order).
#[inline]
fn flat_input(xd: &[f64], batch: usize, plane: usize, b: usize, i: usize) -> f64 {
    let (c, pix) = (i / plane, i % plane);
    xd[(c * batch + b) * plane + pix]
}

/// Fully connected layer over the flattened input; output `[O, B, 1, 1]`.
pub fn fc(layer: &LayerSpec, w: &[f64], bias: &[f64], x: &Tensor) -> Result<Tensor> {
    let LayerSpec::Fc { inputs, outputs, .. } = *layer else {
        bail!(Config, "fc called with a {} layer", layer.name());
    };
    check_weights(layer, w, bias)?;
    let (c, batch, h, wd) = dims(x)?;
    layer.output(FeatureShape::new(c, h, wd))?;
    let xd = x.data();
    let mut z = vec![0.0; outputs * batch];
    for o in 0..outputs {
        for b in 0..batch {
            let mut acc = 0.0;
            for i in 0..inputs {
                acc += w[o * inputs + i] * flat_input(xd, batch, h * wd, b, i);
            }
            if !bias.is_empty() {
                acc += bias[o];
            }
            z[o * batch + b] = acc;
        }
    }
    Ok(tensor4(outputs, batch, 1, 1, z))
}

pub fn fc_input_grad(layer: &LayerSpec, w: &[f64], dz: &Tensor, input: FeatureShape) -> Result<Tensor> {
    let LayerSpec::Fc { inputs, outputs, .. } = *layer else {
        bail!(Config, "fc_input_grad called with a {} layer", layer.name());
    };
    check_weights(layer, w, &[])?;
    layer.output(input)?;
    let (o_dim, batch, _, _) = dims(dz)?;
    if o_dim != outputs || dz.len() != outputs * batch {
        bail!(Shape, "delta shape {:?} does not match fc outputs {}", dz.shape(), outputs);
    }
    let plane = input.plane();
    let dzd = dz.data();
    let mut dx = vec![0.0; inputs * batch];
    for i in 0..inputs {
        for b in 0..batch {
            let mut s = 0.0;
            for o in 0..outputs {
                s += w[o * inputs + i] * dzd[o * batch + b];
            }
            let (c, pix) = (i / plane, i % plane);
            dx[(c * batch + b) * plane + pix] = s;
        }
    }
    Ok(tensor4(input.channels, batch, input.height, input.width, dx))
}

/// Dense fc weight gradient, `[O, I, 1, 1]`.
pub fn fc_weight_grad(layer: &LayerSpec, x: &Tensor, dz: &Tensor) -> Result<Tensor> {
    let LayerSpec::Fc { inputs, outputs, .. } = *layer else {
        bail!(Config, "fc_weight_grad called with a {} layer", layer.name());
    };
    let (c, batch, h, wd) = dims(x)?;
    layer.output(FeatureShape::new(c, h, wd))?;
    if dims(dz)? != (outputs, batch, 1, 1) {
        bail!(Shape, "delta shape {:?} does not match fc outputs {}", dz.shape(), outputs);
    }
    let (xd, dzd) = (x.data(), dz.data());
    let mut g = vec![0.0; outputs * inputs];
    for o in 0..outputs {
        for i in 0..inputs {
            let mut acc = 0.0;
            for b in 0..batch {
                acc += dzd[o * batch + b] * flat_input(xd, batch, h * wd, b, i);
            }
            g[o * inputs + i] = acc;
        }
    }
    Ok(Tensor::new(vec![outputs, inputs, 1, 1], g).expect("shape matches"))
}

pub fn relu_forward(z: &Tensor) -> Tensor {
    Tensor::new(z.shape().to_vec(), z.data().iter().map(|&v| relu(v)).collect()).expect("same shape")
}

/// Max pooling with window and stride `size`. Returns the output and, per
/// output element, the flat input index it was taken from (first maximum
/// in window order).
pub fn maxpool(x: &Tensor, size: usize) -> Result<(Tensor, Vec<u32>)> {
    let (c, batch, h, w) = dims(x)?;
    let out = LayerSpec::MaxPool { size }.output(FeatureShape::new(c, h, w))?;
    let (oh, ow) = (out.height, out.width);
    let xd = x.data();
    let mut y = Vec::with_capacity(c * batch * oh * ow);
    let mut arg = Vec::with_capacity(y.capacity());
    for cb in 0..c * batch {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = usize::MAX;
                for dy in 0..size {
                    for dx in 0..size {
                        let i = (cb * h + oy * size + dy) * w + ox * size + dx;
                        if best == usize::MAX || xd[i] > xd[best] {
                            best = i;
                        }
                    }
                }
                y.push(xd[best]);
                arg.push(best as u32);
            }
        }
    }
    Ok((tensor4(c, batch, oh, ow, y), arg))
}

pub fn maxpool_backward(dy: &Tensor, arg: &[u32], input: &[usize]) -> Result<Tensor> {
    if dy.len() != arg.len() {
        bail!(Shape, "pool gradient has {} entries for {} windows", dy.len(), arg.len());
    }
    let mut dx = vec![0.0; input.iter().product()];
    for (&g, &i) in dy.data().iter().zip(arg) {
        dx[i as usize] += g;
    }
    Tensor::new(input.to_vec(), dx)
}

pub fn avgpool(x: &Tensor, size: usize) -> Result<Tensor> {
    let (c, batch, h, w) = dims(x)?;
    let out = LayerSpec::AvgPool { size }.output(FeatureShape::new(c, h, w))?;
    let (oh, ow) = (out.height, out.width);
    let xd = x.data();
    let scale = 1.0 / (size * size) as f64;
    let mut y = Vec::with_capacity(c * batch * oh * ow);
    for cb in 0..c * batch {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0;
                for dy in 0..size {
                    for dx in 0..size {
                        acc += xd[(cb * h + oy * size + dy) * w + ox * size + dx];
                    }
                }
                y.push(acc * scale);
            }
        }
    }
    Ok(tensor4(c, batch, oh, ow, y))
}

pub fn avgpool_backward(dy: &Tensor, size: usize, input: &[usize]) -> Result<Tensor> {
    let &[c, batch, h, w] = input else {
        bail!(Shape, "expected a 4-D input shape, got {:?}", input);
    };
    let (oh, ow) = (h / size, w / size);
    if dy.len() != c * batch * oh * ow {
        bail!(Shape, "pool gradient has {} entries, expected {}", dy.len(), c * batch * oh * ow);
    }
    let scale = 1.0 / (size * size) as f64;
    let dyd = dy.data();
    let mut dx = vec![0.0; c * batch * h * w];
    for cb in 0..c * batch {
        for oy in 0..oh {
            for ox in 0..ow {
                let g = dyd[(cb * oh + oy) * ow + ox] * scale;
                for dy in 0..size {
                    for dx_ in 0..size {
                        dx[(cb * h + oy * size + dy) * w + ox * size + dx_] = g;
                    }
                }
            }
        }
    }
    Tensor::new(input.to_vec(), dx)
}

/// Mean softmax cross-entropy of a batch.
#[derive(Clone, Debug, PartialEq)]
pub struct SoftmaxXent {
    pub loss: f64,
    /// Gradient of the mean loss with respect to the logits.
    pub grad: Tensor,
    /// Whether the first maximal logit of each example is its label.
    pub correct: Vec<bool>,
}

pub fn softmax_xent(logits: &Tensor, labels: &[usize]) -> Result<SoftmaxXent> {
    let (k, batch, h, w) = dims(logits)?;
    if h * w != 1 {
        bail!(Shape, "logits must be [K, B, 1, 1], got {:?}", logits.shape());
    }
    if labels.len() != batch {
        bail!(Shape, "{} labels for a batch of {}", labels.len(), batch);
    }
    let z = logits.data();
    let mut grad = vec![0.0; k * batch];
    let mut correct = Vec::with_capacity(batch);
    let mut total = 0.0;
    for (b, &label) in labels.iter().enumerate() {
        if label >= k {
            bail!(Shape, "label {} outside {} classes", label, k);
        }
        let mut arg = 0;
        for j in 1..k {
            if z[j * batch + b] > z[arg * batch + b] {
                arg = j;
            }
        }
        let max = z[arg * batch + b];
        let mut denom = 0.0;
        for j in 0..k {
            denom += libm::exp(z[j * batch + b] - max);
        }
        total += libm::log(denom) - (z[label * batch + b] - max);
        for j in 0..k {
            let pj = libm::exp(z[j * batch + b] - max) / denom;
            grad[j * batch + b] = (pj - if j == label { 1.0 } else { 0.0 }) / batch as f64;
        }
        correct.push(arg == label);
    }
    let loss = total / batch as f64;
    if !loss.is_finite() {
        bail!(Numeric, "non-finite loss {}", loss);
    }
    Ok(SoftmaxXent { loss, grad: tensor4(k, batch, 1, 1, grad), correct })
}

/// One weighted (conv or fc) layer followed by `act`: returns the
/// pre-activation `z = W * a_prev + b` and `a = act(z)`.
pub fn forward(layer: &LayerSpec, w: &[f64], bias: &[f64], a_prev: &Tensor, act: Activation) -> Result<(Tensor, Tensor)> {
    let z = match layer {
        LayerSpec::Conv2d { .. } => conv2d(layer, w, bias, a_prev)?,
        LayerSpec::Fc { .. } => fc(layer, w, bias, a_prev)?,
        _ => bail!(Config, "forward expects a conv2d or fc layer, got {}", layer.name()),
    };
    let a = Tensor::new(z.shape().to_vec(), z.data().iter().map(|&v| act.apply(v)).collect())?;
    Ok((z, a))
}

/// Error at the input side of weighted layer `layer`:
/// `(W^T delta_next) * act'(z)`, where `z` is the pre-activation that fed
/// the layer (its shape fixes the input geometry).
pub fn backward_error(
    layer: &LayerSpec,
    w: &[f64],
    delta_next: &Tensor,
    z: Option<&Tensor>,
    act: Activation,
) -> Result<Tensor> {
    let Some(z) = z else {
        bail!(State, "backward_error needs the cached pre-activation of the layer below");
    };
    let (c, _, h, wd) = dims(z)?;
    let input = FeatureShape::new(c, h, wd);
    let mut delta = match layer {
        LayerSpec::Conv2d { .. } => conv2d_input_grad(layer, w, delta_next, input)?,
        LayerSpec::Fc { .. } => fc_input_grad(layer, w, delta_next, input)?,
        _ => bail!(Config, "backward_error expects a conv2d or fc layer, got {}", layer.name()),
    };
    if delta.shape() != z.shape() {
        bail!(Shape, "delta shape {:?} does not match cached z {:?}", delta.shape(), z.shape());
    }
    for (d, &zv) in delta.data_mut().iter_mut().zip(z.data()) {
        *d *= act.derivative(zv);
    }
    Ok(delta)
}

/// Weight gradient of a conv or fc layer, zeroed outside `mask` (a missing
/// mask means dense).
pub fn weight_gradient(layer: &LayerSpec, a_prev: &Tensor, delta: &Tensor, mask: Option<&Mask>) -> Result<Tensor> {
    let mut g = match layer {
        LayerSpec::Conv2d { .. } => conv2d_weight_grad(layer, a_prev, delta)?,
        LayerSpec::Fc { .. } => fc_weight_grad(layer, a_prev, delta)?,
        _ => bail!(Config, "weight_gradient expects a conv2d or fc layer, got {}", layer.name()),
    };
    if let Some(mask) = mask {
        if Some(*mask.shape()) != layer.weight_shape() {
            bail!(Shape, "mask shape {:?} does not match layer {:?}", mask.shape(), layer.weight_shape());
        }
        for (v, &on) in g.data_mut().iter_mut().zip(mask.bits()) {
            if !on {
                *v = 0.0;
            }
        }
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparsity::{random_mask, Scheme};

    fn t4(c: usize, b: usize, h: usize, w: usize, data: &[f64]) -> Tensor {
        Tensor::new(vec![c, b, h, w], data.to_vec()).unwrap()
    }

    #[test]
    fn identity_one_by_one_conv() {
        let layer = LayerSpec::Conv2d { filters: 1, channels: 1, kernel: 1, stride: 1, padding: 0, bias: false };
        let x = t4(1, 2, 2, 2, &[1.0, -2.0, 3.0, 4.5, 0.0, 7.0, -1.0, 2.0]);
        let (z, a) = forward(&layer, &[1.0], &[], &x, Activation::Identity).unwrap();
        assert_eq!(z, x);
        assert_eq!(a, x);
    }

    #[test]
    fn hand_convolution() {
        let layer = LayerSpec::Conv2d { filters: 1, channels: 1, kernel: 2, stride: 1, padding: 0, bias: false };
        let x = t4(1, 1, 2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let (z, _) = forward(&layer, &[1.0, 0.0, 0.0, 1.0], &[], &x, Activation::Identity).unwrap();
        assert_eq!(z.data(), [5.0]);
    }

    #[test]
    fn zero_fc_gives_zero() {
        let layer = LayerSpec::fc(6, 3);
        let x = Tensor::from_fn(&[6, 2, 1, 1], |i| i as f64 - 3.0);
        let (z, _) = forward(&layer, &[0.0; 18], &[0.0; 3], &x, Activation::Relu).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_delta_gives_zero_error() {
        let layer = LayerSpec::conv(2, 3, 3, 1);
        let z = Tensor::from_fn(&[3, 2, 4, 4], |i| libm::sin(i as f64));
        let d = Tensor::zeros(&[2, 2, 4, 4]);
        let w: Vec<f64> = (0..54).map(|i| i as f64 * 0.1).collect();
        let e = backward_error(&layer, &w, &d, Some(&z), Activation::Relu).unwrap();
        assert!(e.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scalar_chain_rule() {
        let layer = LayerSpec::Conv2d { filters: 1, channels: 1, kernel: 1, stride: 1, padding: 0, bias: false };
        let z = Tensor::from_fn(&[1, 1, 3, 3], |i| i as f64 - 4.0);
        let d = Tensor::from_fn(&[1, 1, 3, 3], |i| 0.5 * i as f64 + 1.0);
        let e = backward_error(&layer, &[-2.5], &d, Some(&z), Activation::Identity).unwrap();
        for (a, b) in e.data().iter().zip(d.data()) {
            assert_eq!(*a, -2.5 * b);
        }
    }

    #[test]
    fn missing_cache_is_a_state_error() {
        let layer = LayerSpec::fc(2, 2);
        let d = Tensor::zeros(&[2, 1, 1, 1]);
        assert!(matches!(
            backward_error(&layer, &[0.0; 4], &d, None, Activation::Relu),
            Err(crate::Error::State(_))
        ));
    }

    #[test]
    fn empty_mask_zeroes_gradient() {
        let layer = LayerSpec::conv(4, 2, 3, 1);
        let x = Tensor::from_fn(&[2, 1, 5, 5], |i| libm::cos(i as f64));
        let d = Tensor::from_fn(&[4, 1, 5, 5], |i| libm::sin(i as f64));
        let mask = Mask::empty(layer.weight_shape().unwrap(), Scheme::Unstructured);
        let g = weight_gradient(&layer, &x, &d, Some(&mask)).unwrap();
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn fc_single_example_gradient_is_outer_product() {
        let layer = LayerSpec::fc(3, 2);
        let x = t4(3, 1, 1, 1, &[1.0, 2.0, -1.0]);
        let d = t4(2, 1, 1, 1, &[0.5, -3.0]);
        let g = weight_gradient(&layer, &x, &d, None).unwrap();
        assert_eq!(g.data(), [0.5, 1.0, -0.5, -3.0, -6.0, 3.0]);
    }

    #[test]
    fn masked_gradient_carries_mask_topology() {
        let layer = LayerSpec::conv(4, 3, 3, 1);
        let x = Tensor::from_fn(&[3, 2, 5, 5], |i| libm::cos(i as f64 * 0.3));
        let d = Tensor::from_fn(&[4, 2, 5, 5], |i| libm::sin(i as f64 * 0.7));
        let mask = random_mask(layer.weight_shape().unwrap(), Scheme::Unstructured, 0.7, 9).unwrap();
        let g = weight_gradient(&layer, &x, &d, Some(&mask)).unwrap();
        for (v, &on) in g.data().iter().zip(mask.bits()) {
            if !on {
                assert_eq!(*v, 0.0);
            } else {
                assert_ne!(*v, 0.0);
            }
        }
    }

    #[test]
    fn pooling_by_hand() {
        let x = t4(1, 1, 2, 4, &[1.0, 5.0, 2.0, 2.0, 3.0, 4.0, 0.0, 2.0]);
        let (y, arg) = maxpool(&x, 2).unwrap();
        assert_eq!(y.data(), [5.0, 2.0]);
        // ties resolve to the first maximum in window order
        assert_eq!(arg, [1, 2]);
        assert_eq!(avgpool(&x, 2).unwrap().data(), [3.25, 1.5]);
        let dx = maxpool_backward(&t4(1, 1, 1, 2, &[1.0, 2.0]), &arg, x.shape()).unwrap();
        assert_eq!(dx.data(), [0.0, 1.0, 2.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn softmax_of_equal_logits() {
        let z = Tensor::zeros(&[4, 1, 1, 1]);
        let r = softmax_xent(&z, &[2]).unwrap();
        assert!((r.loss - libm::log(4.0)).abs() < 1e-15);
        assert_eq!(r.grad.data(), [0.25, 0.25, -0.75, 0.25]);
        assert!(!r.correct[0]);
        assert!(softmax_xent(&z, &[4]).is_err());
    }
}
