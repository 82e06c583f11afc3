//! MNIST (IDX) and CIFAR-10 (binary batch) readers.

use std::path::{Path, PathBuf};

use mest_core::data::{synth, LabeledDataset, Split};
use mest_core::nn::FeatureShape;
use mest_core::train::{DatasetConfig, DatasetSource};

use crate::error::{LabError, Result};
use crate::fsio;

/// Decoded IDX file of unsigned bytes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Idx {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

pub const IDX_IMAGES: u32 = 0x0000_0803;
pub const IDX_LABELS: u32 = 0x0000_0801;

/// Parses an IDX byte stream: a big-endian magic (`0x00000803` for image
/// stacks, `0x00000801` for label vectors), one big-endian `u32` per
/// dimension, then the payload.
pub fn parse_idx(bytes: &[u8]) -> std::result::Result<Idx, String> {
    if bytes.len() < 4 {
        return Err("file shorter than the IDX magic".into());
    }
    let magic = u32::from_be_bytes(bytes[..4].try_into().expect("4 bytes"));
    let ndim = match magic {
        IDX_IMAGES => 3,
        IDX_LABELS => 1,
        _ => return Err(format!("bad IDX magic {magic:#010x}")),
    };
    let header = 4 + 4 * ndim;
    if bytes.len() < header {
        return Err("truncated IDX header".into());
    }
    let dims: Vec<usize> = bytes[4..header]
        .chunks(4)
        .map(|c| u32::from_be_bytes(c.try_into().expect("4 bytes")) as usize)
        .collect();
    let expect = dims.iter().product::<usize>();
    if bytes.len() - header != expect {
        return Err(format!("dimensions {:?} need {} bytes, found {}", dims, expect, bytes.len() - header));
    }
    Ok(Idx { dims, data: bytes[header..].to_vec() })
}

pub fn encode_idx(idx: &Idx) -> Vec<u8> {
    let magic = if idx.dims.len() == 3 { IDX_IMAGES } else { IDX_LABELS };
    let mut out = magic.to_be_bytes().to_vec();
    for &d in &idx.dims {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(&idx.data);
    out
}

fn idx_file(path: &Path) -> Result<Idx> {
    parse_idx(&fsio::read(path)?).map_err(|m| LabError::format(path, m))
}

/// Loads a 10-class image/label pair of IDX files.
pub fn load_idx(images: &Path, labels: &Path, split: Split) -> Result<LabeledDataset> {
    let img = idx_file(images)?;
    let lab = idx_file(labels)?;
    if img.dims.len() != 3 {
        return Err(LabError::format(images, "expected an image stack"));
    }
    if lab.dims.len() != 1 || lab.dims[0] != img.dims[0] {
        return Err(LabError::format(labels, format!("{:?} labels for {} images", lab.dims, img.dims[0])));
    }
    let shape = FeatureShape::new(1, img.dims[1], img.dims[2]);
    LabeledDataset::new(shape, 10, split, img.data, lab.data).map_err(|e| LabError::format(labels, e.to_string()))
}

pub const CIFAR_RECORD: usize = 3073;

/// Parses CIFAR-10 binary batches: records of one label byte and 3072
/// channel-major pixels of a 32x32 RGB image.
pub fn load_cifar10(paths: &[PathBuf], split: Split) -> Result<LabeledDataset> {
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for path in paths {
        let bytes = fsio::read(path)?;
        if bytes.len() % CIFAR_RECORD != 0 {
            return Err(LabError::format(path, format!("{} bytes is not a whole number of records", bytes.len())));
        }
        for rec in bytes.chunks(CIFAR_RECORD) {
            if rec[0] >= 10 {
                return Err(LabError::format(path, format!("label {} out of range", rec[0])));
            }
            labels.push(rec[0]);
            images.extend_from_slice(&rec[1..]);
        }
    }
    Ok(LabeledDataset::new(FeatureShape::new(3, 32, 32), 10, split, images, labels)?)
}

/// Dataset root: `MEST_DATA_DIR` if set, else `data`.
pub fn data_root() -> PathBuf {
    std::env::var_os("MEST_DATA_DIR").map(PathBuf::from).unwrap_or_else(|| PathBuf::from("data"))
}

/// Training and test sets described by `cfg`, with limits applied.
pub fn load(cfg: &DatasetConfig, root: &Path, seed: u64) -> Result<(LabeledDataset, LabeledDataset)> {
    let (train, test) = match cfg.source {
        DatasetSource::Mnist => {
            let dir = root.join("mnist");
            (
                load_idx(&dir.join("train-images-idx3-ubyte"), &dir.join("train-labels-idx1-ubyte"), Split::Train)?,
                load_idx(&dir.join("t10k-images-idx3-ubyte"), &dir.join("t10k-labels-idx1-ubyte"), Split::Test)?,
            )
        }
        DatasetSource::Cifar10 => {
            let dir = root.join("cifar-10-batches-bin");
            let train: Vec<PathBuf> = (1..=5).map(|i| dir.join(format!("data_batch_{i}.bin"))).collect();
            (load_cifar10(&train, Split::Train)?, load_cifar10(&[dir.join("test_batch.bin")], Split::Test)?)
        }
        DatasetSource::Synth => {
            let (shape, classes) = cfg.geometry();
            let s = cfg.synth;
            (synth(s.train, classes, seed, shape, Split::Train)?, synth(s.test, classes, seed, shape, Split::Test)?)
        }
    };
    let limit = |ds: LabeledDataset, n: Option<usize>| match n {
        Some(n) => ds.truncated(n),
        None => ds,
    };
    Ok((limit(train, cfg.train_limit), limit(test, cfg.test_limit)))
}
