use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::config::{Precision, RunConfig};
use crate::data::{make_batch, Augment, LabeledDataset, Normalization};
use crate::error::{bail, Result};
use crate::flops::{flops_report, schedule_density, FlopsReport};
use crate::forgetting::{DatasetView, ForgettingLog};
use crate::mutation::{mutate_layer, Action, MutationMode};
use crate::nn::{Model, WeightStore};
use crate::optim::{round_f32, sgd_step};
use crate::rng::{stream, Purpose};
use crate::sparsity::{model_footprint, random_mask_with, FootprintReport, Scheme};

/// One row of the metrics table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Rate of the last step of the epoch.
    pub lr: f64,
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_acc: f64,
    pub nnz_total: usize,
    /// Sparsity over the sparsified layers.
    pub sparsity_actual: f64,
    pub dataset_size: usize,
    pub p_current: f64,
    /// Exact weight + gradient + index bits at the end of the epoch.
    pub footprint_bits: f64,
    /// Per-layer nonzeros while training this epoch (after its mutation).
    pub layer_nnz: Vec<usize>,
}

/// One mutation step applied to one layer.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MutationEvent {
    pub epoch: usize,
    pub param: usize,
    pub action: Action,
    pub nnz: usize,
}

/// Everything needed to continue a run bit-exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingState {
    /// Next epoch to run.
    pub epoch: usize,
    pub step: u64,
    pub model: Model,
    /// Momentum aligned with each parameter's stored weights.
    pub momentum: Vec<Vec<f64>>,
    pub bias_momentum: Vec<Vec<f64>>,
    /// Weight gradients of the final minibatch of the last epoch.
    pub last_grads: Vec<Vec<f64>>,
    pub log: ForgettingLog,
    /// Compressed training set once phase 2 has begun.
    pub view: Option<DatasetView>,
    pub history: Vec<EpochMetrics>,
    pub mutations: Vec<MutationEvent>,
}

/// Runs epochs of one configuration over fixed train and test sets.
#[derive(Debug)]
pub struct Trainer<'a> {
    cfg: &'a RunConfig,
    train: &'a LabeledDataset,
    test: &'a LabeledDataset,
    norm: Normalization,
    /// Per parameter layer: sparsity target, or `None` when dense.
    targets: Vec<Option<f64>>,
    schemes: Vec<Option<Scheme>>,
    template: Model,
}

impl<'a> Trainer<'a> {
    pub fn new(cfg: &'a RunConfig, train: &'a LabeledDataset, test: &'a LabeledDataset) -> Result<Self> {
        cfg.validate()?;
        if train.is_empty() || test.is_empty() {
            bail!(Config, "empty training or test set");
        }
        if train.shape() != test.shape() || train.classes() != test.classes() {
            bail!(Shape, "train and test sets differ in geometry");
        }
        let layers = cfg.model.layers(train.shape(), train.classes())?;
        let mut template = Model::new(train.shape(), layers)?;
        if template.classes() != train.classes() {
            bail!(Config, "model emits {} classes, data has {}", template.classes(), train.classes());
        }
        template.kernel = cfg.kernel;
        let shapes = template.param_shapes();
        let schemes = cfg.schemes(shapes.len())?;
        let sparsities = cfg.targets(&shapes)?;
        let targets: Vec<Option<f64>> = schemes.iter().zip(&sparsities).map(|(sc, &s)| sc.map(|_| s)).collect();
        let active: Vec<f64> = targets.iter().flatten().copied().collect();
        cfg.mutation.validate(&active)?;
        if cfg.mutation.mode != MutationMode::Static {
            // every intermediate sparsity must be representable by the scheme
            for (i, (&t, sc)) in targets.iter().zip(&schemes).enumerate() {
                if let (Some(s), Some(scheme)) = (t, sc) {
                    for tau in 0..cfg.epochs {
                        for a in cfg.mutation.actions_at(tau, s) {
                            if let Err(e) = scheme.kept_units(&shapes[i], a.target()) {
                                bail!(Feasibility, "layer {} at epoch {}: {}", i, tau, e);
                            }
                        }
                    }
                }
            }
        }
        let norm = match &cfg.normalization {
            Some(n) => n.clone(),
            None => Normalization::fit(train),
        };
        if norm.mean.len() != train.shape().channels {
            bail!(Config, "normalization has {} channels", norm.mean.len());
        }
        Ok(Self { cfg, train, test, norm, targets, schemes, template })
    }

    pub fn config(&self) -> &RunConfig {
        self.cfg
    }

    pub fn normalization(&self) -> &Normalization {
        &self.norm
    }

    pub fn targets(&self) -> &[Option<f64>] {
        &self.targets
    }

    /// Expected nonzeros of each sparse layer while training epoch `tau`.
    pub fn expected_nnz(&self, tau: usize) -> Result<Vec<Option<usize>>> {
        let shapes = self.template.param_shapes();
        self.targets
            .iter()
            .zip(&self.schemes)
            .zip(&shapes)
            .map(|((t, sc), shape)| match (t, sc) {
                (Some(s), Some(scheme)) => {
                    Ok(Some(scheme.nnz_for(shape, self.cfg.mutation.training_sparsity(tau, *s))?))
                }
                _ => Ok(None),
            })
            .collect()
    }

    /// Fresh state: initialized weights with random masks at the targets.
    pub fn init_state(&self) -> Result<TrainingState> {
        let mut model = self.template.clone();
        model.init(self.cfg.seed);
        let shapes = model.param_shapes();
        for (i, (t, sc)) in self.targets.iter().zip(&self.schemes).enumerate() {
            if let (Some(s), Some(scheme)) = (t, sc) {
                let mut rng = stream(self.cfg.seed, Purpose::Mask, i as u64, 0);
                let mask = random_mask_with(shapes[i], *scheme, *s, &mut rng)?;
                model.sparsify(i, &mask)?;
            }
        }
        if self.cfg.precision == Precision::F32 {
            for p in model.params_mut() {
                round_f32(p.weights.values_mut());
            }
        }
        let momentum = model.params().iter().map(|p| vec![0.0; p.weights.nnz()]).collect();
        let bias_momentum = model.params().iter().map(|p| vec![0.0; p.bias.len()]).collect();
        let last_grads = model.params().iter().map(|p| vec![0.0; p.weights.nnz()]).collect();
        Ok(TrainingState {
            epoch: 0,
            step: 0,
            model,
            momentum,
            bias_momentum,
            last_grads,
            log: ForgettingLog::new(self.train.len()),
            view: None,
            history: Vec::new(),
            mutations: Vec::new(),
        })
    }

    /// Checks that a (possibly restored) state fits this run.
    pub fn check_state(&self, st: &TrainingState) -> Result<()> {
        let params = st.model.params();
        let ok = st.epoch <= self.cfg.epochs
            && st.model.layers() == self.template.layers()
            && st.momentum.len() == params.len()
            && st.bias_momentum.len() == params.len()
            && st.last_grads.len() == params.len()
            && params.iter().enumerate().all(|(i, p)| {
                st.momentum[i].len() == p.weights.nnz()
                    && st.last_grads[i].len() == p.weights.nnz()
                    && st.bias_momentum[i].len() == p.bias.len()
            })
            && st.log.len() == self.train.len()
            && st.history.len() == st.epoch;
        if !ok {
            bail!(State, "training state does not match the run configuration");
        }
        Ok(())
    }

    fn mutate(&self, st: &mut TrainingState, tau: usize) -> Result<()> {
        let lambda = self.cfg.mutation.lambda;
        for (i, t) in self.targets.iter().enumerate() {
            let Some(s) = *t else { continue };
            let actions = self.cfg.mutation.actions_at(tau, s);
            if actions.is_empty() {
                continue;
            }
            let WeightStore::Sparse(layer) = &st.model.params()[i].weights else {
                bail!(State, "layer {} should be compressed", i);
            };
            let mut rng = stream(self.cfg.seed, Purpose::Mutation, tau as u64, i as u64);
            let out = mutate_layer(layer, &st.last_grads[i], &[&st.momentum[i]], &actions, lambda, &mut rng)?;
            for (a, &nnz) in actions.iter().zip(&out.nnz_trace) {
                st.mutations.push(MutationEvent { epoch: tau, param: i, action: *a, nnz });
            }
            let [momentum] = <[Vec<f64>; 1]>::try_from(out.aligned).expect("one aligned array");
            st.model.params_mut()[i].weights = WeightStore::Sparse(out.layer);
            st.last_grads[i] = out.grad;
            st.momentum[i] = momentum;
        }
        Ok(())
    }

    /// Exact weight + gradient + index bits of the current model.
    pub fn footprint(&self, model: &Model) -> FootprintReport {
        let layers: Vec<_> = model.params().iter().map(|p| (p.shape, p.weights.scheme(), p.weights.nnz())).collect();
        model_footprint(&layers, self.cfg.widths)
    }

    /// Per-example FLOPs with each layer's density averaged over the
    /// schedule.
    pub fn flops(&self) -> Result<FlopsReport> {
        let densities: Vec<f64> =
            self.targets.iter().map(|t| t.map_or(1.0, |s| schedule_density(&self.cfg.mutation, s))).collect();
        flops_report(self.template.input_shape(), self.template.layers(), &densities)
    }

    /// Classifies the test set; returns the accuracy.
    pub fn test_accuracy(&self, model: &Model) -> Result<f64> {
        let idx: Vec<usize> = (0..self.test.len()).collect();
        let mut correct = 0;
        for chunk in idx.chunks(self.cfg.eval_batch) {
            let (x, labels) = make_batch(self.test, chunk, &self.norm, None)?;
            correct += model.evaluate(&x, &labels)?.1.iter().filter(|&&c| c).count();
        }
        Ok(correct as f64 / self.test.len() as f64)
    }

    /// Runs epoch `st.epoch`: data-efficiency compression, mutation,
    /// one pass of SGD over the (possibly compressed) training set, and
    /// evaluation.
    pub fn run_epoch(&self, st: &mut TrainingState) -> Result<EpochMetrics> {
        let cfg = self.cfg;
        let tau = st.epoch;
        if tau >= cfg.epochs {
            bail!(State, "run already finished after {} epochs", cfg.epochs);
        }
        let de = cfg.data_efficiency;
        if de.enabled && tau == cfg.e1() {
            if st.view.is_some() {
                bail!(State, "training set already compressed");
            }
            st.view = Some(st.log.compress(de.th, tau, cfg.seed)?);
        }
        self.mutate(st, tau)?;
        let layer_nnz: Vec<usize> = st.model.params().iter().map(|p| p.weights.nnz()).collect();

        let mut order: Vec<usize> = match &st.view {
            Some(v) => v.indices.clone(),
            None => (0..self.train.len()).collect(),
        };
        order.shuffle(&mut stream(cfg.seed, Purpose::Shuffle, tau as u64, 0));
        let record = st.view.is_none();
        let mut observed = vec![false; if record { self.train.len() } else { 0 }];
        let batches = order.len().div_ceil(cfg.batch_size);
        let (mut loss_sum, mut correct, mut lr) = (0.0, 0usize, 0.0);
        let opt = cfg.optimizer;
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let mut rng = stream(cfg.seed, Purpose::Augment, tau as u64, b as u64);
            let mut draw = || Augment::draw(&mut rng);
            let aug: Option<&mut dyn FnMut() -> Augment> = if cfg.dataset.augment { Some(&mut draw) } else { None };
            let (x, labels) = make_batch(self.train, idx, &self.norm, aug)?;
            let out = st.model.loss_grad(&x, &labels)?;
            lr = opt.lr_at(tau, b, batches, cfg.epochs);
            for (i, p) in st.model.params_mut().iter_mut().enumerate() {
                let w = p.weights.values_mut();
                sgd_step(w, &out.grads.weights[i], &mut st.momentum[i], lr, opt.momentum, opt.weight_decay);
                sgd_step(&mut p.bias, &out.grads.bias[i], &mut st.bias_momentum[i], lr, opt.momentum, opt.weight_decay);
                if cfg.precision == Precision::F32 {
                    round_f32(p.weights.values_mut());
                    round_f32(&mut p.bias);
                    round_f32(&mut st.momentum[i]);
                    round_f32(&mut st.bias_momentum[i]);
                }
            }
            if !st.model.params().iter().all(|p| p.weights.values().iter().all(|v| v.is_finite())) {
                bail!(Numeric, "weights diverged at epoch {} batch {}", tau, b);
            }
            loss_sum += out.loss * idx.len() as f64;
            correct += out.correct.iter().filter(|&&c| c).count();
            if record {
                for (&i, &c) in idx.iter().zip(&out.correct) {
                    observed[i] = c;
                }
            }
            if b + 1 == batches {
                st.last_grads = out.grads.weights;
            }
            st.step += 1;
        }
        if record {
            st.log.record_epoch(&observed)?;
        }

        let nnz_total = st.model.nnz();
        let (mut kept, mut total) = (0usize, 0usize);
        for p in st.model.params().iter().filter(|p| p.weights.scheme().is_some()) {
            kept += p.weights.nnz();
            total += p.shape.weights();
        }
        let m = EpochMetrics {
            epoch: tau,
            lr,
            train_loss: loss_sum / order.len() as f64,
            train_acc: correct as f64 / order.len() as f64,
            test_acc: self.test_accuracy(&st.model)?,
            nnz_total,
            sparsity_actual: if total == 0 { 0.0 } else { 1.0 - kept as f64 / total as f64 },
            dataset_size: order.len(),
            p_current: if cfg.mutation.mode == MutationMode::Static || tau >= cfg.mutation.stop {
                0.0
            } else {
                cfg.mutation.p_at(tau)
            },
            footprint_bits: self.footprint(&st.model).total,
            layer_nnz,
        };
        st.history.push(m.clone());
        st.epoch += 1;
        Ok(m)
    }
}
