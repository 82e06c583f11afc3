//! In-memory labelled image sets, per-channel normalization, the pad-and-crop
//! plus flip augmentation, and a synthetic Gaussian-blob generator.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{bail, Result};
use crate::nn::FeatureShape;
use crate::rng::{stream, Purpose};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

/// `u8` images stored example-major as `[N, C, H, W]`, with class labels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabeledDataset {
    shape: FeatureShape,
    classes: usize,
    split: Split,
    images: Vec<u8>,
    labels: Vec<u8>,
    checksum: [u8; 32],
}

impl LabeledDataset {
    pub fn new(shape: FeatureShape, classes: usize, split: Split, images: Vec<u8>, labels: Vec<u8>) -> Result<Self> {
        if shape.is_empty() || classes == 0 || classes > 256 {
            bail!(Shape, "bad dataset geometry {:?} with {} classes", shape, classes);
        }
        if images.len() != labels.len() * shape.len() {
            bail!(Shape, "{} pixels for {} images of {:?}", images.len(), labels.len(), shape);
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= classes) {
            bail!(Format, "label {} not below {} classes", bad, classes);
        }
        let checksum = Self::digest(&shape, &images, &labels);
        Ok(Self { shape, classes, split, images, labels, checksum })
    }

    fn digest(shape: &FeatureShape, images: &[u8], labels: &[u8]) -> [u8; 32] {
        let mut h = Sha256::new();
        for d in [shape.channels, shape.height, shape.width, labels.len()] {
            h.update((d as u64).to_le_bytes());
        }
        h.update(images);
        h.update(labels);
        h.finalize().into()
    }

    pub fn shape(&self) -> FeatureShape {
        self.shape
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let n = self.shape.len();
        &self.images[i * n..(i + 1) * n]
    }

    pub fn images(&self) -> &[u8] {
        &self.images
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i] as usize
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    /// SHA-256 over the geometry, pixels and labels.
    pub fn checksum(&self) -> [u8; 32] {
        self.checksum
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        self.labels.iter().for_each(|&l| counts[l as usize] += 1);
        counts
    }

    /// The first `n` examples (all of them if `n` is larger).
    pub fn truncated(&self, n: usize) -> Self {
        let n = n.min(self.len());
        let images = self.images[..n * self.shape.len()].to_vec();
        let labels = self.labels[..n].to_vec();
        let checksum = Self::digest(&self.shape, &images, &labels);
        Self { images, labels, checksum, ..*self }
    }
}

/// Per-channel affine map from raw pixels to network inputs:
/// `(x / 255 - mean) / std`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalization {
    /// Mean and population standard deviation of each channel over a set.
    pub fn fit(data: &LabeledDataset) -> Self {
        let FeatureShape { channels, .. } = data.shape();
        let plane = data.shape().plane();
        let mut sum = vec![0.0; channels];
        let mut sq = vec![0.0; channels];
        for i in 0..data.len() {
            for (c, chunk) in data.image(i).chunks(plane).enumerate() {
                for &p in chunk {
                    let x = p as f64 / 255.0;
                    sum[c] += x;
                    sq[c] += x * x;
                }
            }
        }
        let count = (data.len() * plane).max(1) as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / count).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| {
                let var = (q / count - m * m).max(0.0);
                if var > 1e-12 {
                    libm::sqrt(var)
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, std }
    }

    pub fn identity(channels: usize) -> Self {
        Self { mean: vec![0.0; channels], std: vec![1.0; channels] }
    }

    pub fn apply(&self, channel: usize, pixel: u8) -> f64 {
        (pixel as f64 / 255.0 - self.mean[channel]) / self.std[channel]
    }
}

/// Random crop offsets into the 4-pixel zero-padded image (each in
/// `0..=8`, 4 meaning no shift) and a horizontal flip.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Augment {
    pub dy: usize,
    pub dx: usize,
    pub flip: bool,
}

pub const AUGMENT_PAD: usize = 4;

impl Augment {
    pub const NONE: Augment = Augment { dy: AUGMENT_PAD, dx: AUGMENT_PAD, flip: false };

    pub fn draw<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self {
            dy: rng.random_range(0..=2 * AUGMENT_PAD),
            dx: rng.random_range(0..=2 * AUGMENT_PAD),
            flip: rng.random(),
        }
    }

    /// Applies the crop and flip to one `[C, H, W]` image.
    pub fn apply(&self, image: &[u8], shape: FeatureShape) -> Vec<u8> {
        let FeatureShape { channels, height, width } = shape;
        let mut out = vec![0u8; image.len()];
        for c in 0..channels {
            for y in 0..height {
                let sy = (y + self.dy).wrapping_sub(AUGMENT_PAD);
                if sy >= height {
                    continue;
                }
                for x in 0..width {
                    let fx = if self.flip { width - 1 - x } else { x };
                    let sx = (fx + self.dx).wrapping_sub(AUGMENT_PAD);
                    if sx < width {
                        out[(c * height + y) * width + x] = image[(c * height + sy) * width + sx];
                    }
                }
            }
        }
        out
    }
}

/// Augments every image of a batch (example-major), drawing one
/// [`Augment`] per image from `seed`.
pub fn augment(images: &[u8], shape: FeatureShape, seed: u64) -> Vec<u8> {
    let mut rng = stream(seed, Purpose::Augment, 0, 0);
    images.chunks(shape.len()).flat_map(|img| Augment::draw(&mut rng).apply(img, shape)).collect()
}

/// Builds a channel-major `[C, B, H, W]` input tensor and its labels from
/// the listed examples. `augment` supplies one transform per example.
pub fn make_batch(
    data: &LabeledDataset,
    indices: &[usize],
    norm: &Normalization,
    mut augment: Option<&mut dyn FnMut() -> Augment>,
) -> Result<(Tensor, Vec<usize>)> {
    let shape = data.shape();
    let (c, plane, b) = (shape.channels, shape.plane(), indices.len());
    if norm.mean.len() != c || norm.std.len() != c {
        bail!(Shape, "normalization has {} channels, data has {}", norm.mean.len(), c);
    }
    let mut x = vec![0.0; c * b * plane];
    let mut labels = Vec::with_capacity(b);
    for (j, &i) in indices.iter().enumerate() {
        if i >= data.len() {
            bail!(Shape, "example {} out of {}", i, data.len());
        }
        let aug;
        let img = match augment.as_mut() {
            Some(draw) => {
                aug = draw().apply(data.image(i), shape);
                &aug[..]
            }
            None => data.image(i),
        };
        for ch in 0..c {
            let dst = &mut x[(ch * b + j) * plane..(ch * b + j + 1) * plane];
            for (d, &p) in dst.iter_mut().zip(&img[ch * plane..(ch + 1) * plane]) {
                *d = norm.apply(ch, p);
            }
        }
        labels.push(data.label(i));
    }
    Ok((Tensor::new(vec![c, b, shape.height, shape.width], x)?, labels))
}

/// Class-balanced images of one Gaussian blob each; class `k` places its
/// blob on a ring around the image centre at angle `2 pi k / classes`, with
/// a one-pixel position jitter and uniform background noise.
pub fn synth(num: usize, classes: usize, seed: u64, shape: FeatureShape, split: Split) -> Result<LabeledDataset> {
    if !(2..=256).contains(&classes) {
        bail!(Config, "synthetic data needs 2 to 256 classes, got {}", classes);
    }
    if shape.height < 6 || shape.width < 6 {
        bail!(Config, "synthetic images must be at least 6x6, got {:?}", shape);
    }
    let mut rng = stream(seed, Purpose::Synth, split as u64, 0);
    let mut labels: Vec<u8> = (0..num).map(|i| (i % classes) as u8).collect();
    labels.shuffle(&mut rng);
    let (h, w) = (shape.height as f64, shape.width as f64);
    let radius = 0.3 * h.min(w);
    let sigma = 0.12 * h.min(w);
    let mut images = Vec::with_capacity(num * shape.len());
    for &label in &labels {
        let angle = core::f64::consts::TAU * label as f64 / classes as f64;
        let cy = (h - 1.0) / 2.0 + radius * libm::sin(angle) + rng.random_range(-1.0..=1.0);
        let cx = (w - 1.0) / 2.0 + radius * libm::cos(angle) + rng.random_range(-1.0..=1.0);
        for _ in 0..shape.channels {
            for y in 0..shape.height {
                for x in 0..shape.width {
                    let d2 = (y as f64 - cy) * (y as f64 - cy) + (x as f64 - cx) * (x as f64 - cx);
                    let v = 200.0 * libm::exp(-d2 / (2.0 * sigma * sigma)) + rng.random_range(0.0..40.0);
                    images.push(v.min(255.0) as u8);
                }
            }
        }
    }
    LabeledDataset::new(shape, classes, split, images, labels)
}
