//! Binary checkpoints.
//!
//! Layout (little-endian): `"MEST"`, version `u16`, the first 8 bytes of the
//! configuration's SHA-256, next epoch `u64`, step `u64`, then per parameter
//! layer a kind byte (0 dense, 1 compressed) followed by either a dense
//! `f64` block or a compressed-layer block, and `f64` blocks for the bias,
//! momentum, bias momentum and last gradient. Then the forgetting history
//! as one bitmap per recorded epoch, the optional dataset view, the metrics
//! history, the mutation log, and a SHA-256 of everything before it.
//! An `f64` block is a `u32` length followed by the values.

use mest_core::forgetting::{DatasetView, ForgettingLog};
use mest_core::mutation::Action;
use mest_core::nn::WeightStore;
use mest_core::sparsity::CompressedLayer;
use mest_core::train::{EpochMetrics, MutationEvent, RunConfig, Trainer, TrainingState};
use sha2::{Digest, Sha256};

pub const MAGIC: &[u8; 4] = b"MEST";
pub const VERSION: u16 = 1;

pub type ConfigHash = [u8; 8];

/// Checkpoint decoding failure.
#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic)")]
    Magic,
    #[error("unsupported checkpoint version {0}")]
    Version(u16),
    #[error("checkpoint truncated at byte {0}")]
    Truncated(usize),
    #[error("checkpoint digest mismatch")]
    Digest,
    #[error("checkpoint was written for a different configuration")]
    Config,
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error(transparent)]
    Core(#[from] mest_core::Error),
}

pub fn config_hash(cfg: &RunConfig) -> ConfigHash {
    let json = serde_json::to_vec(cfg).expect("configuration serializes");
    let digest: [u8; 32] = Sha256::digest(&json).into();
    digest[..8].try_into().expect("8 bytes")
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamBlock {
    pub weights: WeightStore,
    pub bias: Vec<f64>,
    pub momentum: Vec<f64>,
    pub bias_momentum: Vec<f64>,
    pub last_grads: Vec<f64>,
}

/// Decoded checkpoint contents, independent of any run configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config_hash: ConfigHash,
    pub epoch: usize,
    pub step: u64,
    pub params: Vec<ParamBlock>,
    pub examples: usize,
    pub forgetting: Vec<Vec<bool>>,
    pub view: Option<DatasetView>,
    pub history: Vec<EpochMetrics>,
    pub mutations: Vec<MutationEvent>,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u32).to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, v: &[f64]) {
        self.u32(v.len());
        v.iter().for_each(|&x| self.f64(x));
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or(CheckpointError::Truncated(self.pos))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<usize, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4")) as usize)
    }
    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8")))
    }
    fn f64(&mut self) -> Result<f64, CheckpointError> {
        Ok(f64::from_bits(self.u64()?))
    }
    fn f64s(&mut self) -> Result<Vec<f64>, CheckpointError> {
        let n = self.u32()?;
        if n * 8 > self.bytes.len() - self.pos {
            return Err(CheckpointError::Truncated(self.pos));
        }
        (0..n).map(|_| self.f64()).collect()
    }
}

fn action_code(a: &Action) -> (u8, f64) {
    match *a {
        Action::RemoveTo { target } => (0, target),
        Action::GrowTo { target } => (1, target),
    }
}

impl Checkpoint {
    pub fn from_state(config_hash: ConfigHash, st: &TrainingState) -> Self {
        let params = st
            .model
            .params()
            .iter()
            .enumerate()
            .map(|(i, p)| ParamBlock {
                weights: p.weights.clone(),
                bias: p.bias.clone(),
                momentum: st.momentum[i].clone(),
                bias_momentum: st.bias_momentum[i].clone(),
                last_grads: st.last_grads[i].clone(),
            })
            .collect();
        Self {
            config_hash,
            epoch: st.epoch,
            step: st.step,
            params,
            examples: st.log.len(),
            forgetting: st.log.history().to_vec(),
            view: st.view.clone(),
            history: st.history.clone(),
            mutations: st.mutations.clone(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(MAGIC);
        w.0.extend_from_slice(&VERSION.to_le_bytes());
        w.0.extend_from_slice(&self.config_hash);
        w.u64(self.epoch as u64);
        w.u64(self.step);
        w.u32(self.params.len());
        for p in &self.params {
            match &p.weights {
                WeightStore::Dense(values) => {
                    w.u8(0);
                    w.f64s(values);
                }
                WeightStore::Sparse(cl) => {
                    w.u8(1);
                    w.0.extend_from_slice(&cl.to_bytes());
                }
            }
            for block in [&p.bias, &p.momentum, &p.bias_momentum, &p.last_grads] {
                w.f64s(block);
            }
        }
        w.u32(self.examples);
        w.u32(self.forgetting.len());
        for epoch in &self.forgetting {
            let mut bits = vec![0u8; self.examples.div_ceil(8)];
            for (i, _) in epoch.iter().enumerate().filter(|(_, &c)| c) {
                bits[i / 8] |= 1 << (i % 8);
            }
            w.0.extend_from_slice(&bits);
        }
        match &self.view {
            None => w.u8(0),
            Some(v) => {
                w.u8(1);
                w.u64(v.base_len as u64);
                w.u64(v.th as u64);
                w.u64(v.e1 as u64);
                w.u64(v.seed);
                w.u32(v.indices.len());
                v.indices.iter().for_each(|&i| w.u32(i));
            }
        }
        w.u32(self.history.len());
        for m in &self.history {
            w.u64(m.epoch as u64);
            for v in [m.lr, m.train_loss, m.train_acc, m.test_acc] {
                w.f64(v);
            }
            w.u64(m.nnz_total as u64);
            w.f64(m.sparsity_actual);
            w.u64(m.dataset_size as u64);
            w.f64(m.p_current);
            w.f64(m.footprint_bits);
            w.u32(m.layer_nnz.len());
            m.layer_nnz.iter().for_each(|&n| w.u64(n as u64));
        }
        w.u32(self.mutations.len());
        for e in &self.mutations {
            let (op, target) = action_code(&e.action);
            w.u64(e.epoch as u64);
            w.u32(e.param);
            w.u8(op);
            w.f64(target);
            w.u64(e.nnz as u64);
        }
        let digest: [u8; 32] = Sha256::digest(&w.0).into();
        w.0.extend_from_slice(&digest);
        w.0
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(CheckpointError::Magic);
        }
        if bytes.len() < 6 + 32 {
            return Err(CheckpointError::Truncated(bytes.len()));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != VERSION {
            return Err(CheckpointError::Version(version));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(CheckpointError::Digest);
        }
        let mut r = Reader { bytes: body, pos: 6 };
        let config_hash: ConfigHash = r.take(8)?.try_into().expect("8");
        let epoch = r.u64()? as usize;
        let step = r.u64()?;
        let n = r.u32()?;
        let mut params = Vec::with_capacity(n.min(1024));
        for _ in 0..n {
            let weights = match r.u8()? {
                0 => WeightStore::Dense(r.f64s()?),
                1 => {
                    let (cl, used) = CompressedLayer::from_bytes(&body[r.pos..])?;
                    r.pos += used;
                    WeightStore::Sparse(cl)
                }
                k => return Err(CheckpointError::Malformed(format!("unknown weight kind {k}"))),
            };
            params.push(ParamBlock {
                weights,
                bias: r.f64s()?,
                momentum: r.f64s()?,
                bias_momentum: r.f64s()?,
                last_grads: r.f64s()?,
            });
        }
        let examples = r.u32()?;
        let epochs = r.u32()?;
        let mut forgetting = Vec::with_capacity(epochs.min(1 << 16));
        for _ in 0..epochs {
            let bits = r.take(examples.div_ceil(8))?;
            forgetting.push((0..examples).map(|i| bits[i / 8] >> (i % 8) & 1 == 1).collect());
        }
        let view = match r.u8()? {
            0 => None,
            1 => {
                let base_len = r.u64()? as usize;
                let th = r.u64()? as i64;
                let e1 = r.u64()? as usize;
                let seed = r.u64()?;
                let count = r.u32()?;
                let indices = (0..count).map(|_| r.u32()).collect::<Result<Vec<_>, _>>()?;
                Some(DatasetView { base_len, indices, th, e1, seed })
            }
            k => return Err(CheckpointError::Malformed(format!("bad view flag {k}"))),
        };
        let count = r.u32()?;
        let mut history = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let epoch = r.u64()? as usize;
            let (lr, train_loss, train_acc, test_acc) = (r.f64()?, r.f64()?, r.f64()?, r.f64()?);
            let nnz_total = r.u64()? as usize;
            let sparsity_actual = r.f64()?;
            let dataset_size = r.u64()? as usize;
            let p_current = r.f64()?;
            let footprint_bits = r.f64()?;
            let layers = r.u32()?;
            let layer_nnz = (0..layers).map(|_| r.u64().map(|v| v as usize)).collect::<Result<_, _>>()?;
            history.push(EpochMetrics {
                epoch,
                lr,
                train_loss,
                train_acc,
                test_acc,
                nnz_total,
                sparsity_actual,
                dataset_size,
                p_current,
                footprint_bits,
                layer_nnz,
            });
        }
        let count = r.u32()?;
        let mut mutations = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let epoch = r.u64()? as usize;
            let param = r.u32()?;
            let op = r.u8()?;
            let target = r.f64()?;
            let nnz = r.u64()? as usize;
            let action = match op {
                0 => Action::RemoveTo { target },
                1 => Action::GrowTo { target },
                k => return Err(CheckpointError::Malformed(format!("bad mutation op {k}"))),
            };
            mutations.push(MutationEvent { epoch, param, action, nnz });
        }
        if r.pos != body.len() {
            return Err(CheckpointError::Malformed(format!("{} trailing bytes", body.len() - r.pos)));
        }
        Ok(Self { config_hash, epoch, step, params, examples, forgetting, view, history, mutations })
    }

    /// Rebuilds the training state of `trainer`'s run.
    pub fn into_state(self, trainer: &Trainer, hash: ConfigHash) -> Result<TrainingState, CheckpointError> {
        if self.config_hash != hash {
            return Err(CheckpointError::Config);
        }
        let mut st = trainer.init_state()?;
        if self.params.len() != st.model.params().len() {
            return Err(CheckpointError::Malformed("parameter layer count differs".into()));
        }
        st.momentum.clear();
        st.bias_momentum.clear();
        st.last_grads.clear();
        for (p, block) in st.model.params_mut().iter_mut().zip(self.params) {
            let fits = match &block.weights {
                WeightStore::Dense(v) => v.len() == p.shape.weights(),
                WeightStore::Sparse(cl) => *cl.shape() == p.shape,
            };
            if !fits || block.bias.len() != p.bias.len() {
                return Err(CheckpointError::Malformed("parameter shapes differ".into()));
            }
            p.weights = block.weights;
            p.bias = block.bias;
            st.momentum.push(block.momentum);
            st.bias_momentum.push(block.bias_momentum);
            st.last_grads.push(block.last_grads);
        }
        st.epoch = self.epoch;
        st.step = self.step;
        st.log = ForgettingLog::from_history(self.examples, &self.forgetting)?;
        st.view = self.view;
        st.history = self.history;
        st.mutations = self.mutations;
        trainer.check_state(&st)?;
        Ok(st)
    }
}
