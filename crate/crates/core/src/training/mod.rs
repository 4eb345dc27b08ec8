//! Joint training of the classifier and the DCCA branch.
//!
//! Each epoch walks the labeled set once in shuffled mini-batches and the
//! neural pairs `neural_cycles_per_epoch` times. After labeled batch `i` of
//! `B`, `⌊T(i+1)/B⌋ − ⌊Ti/B⌋` neural batches run, where `T` is the epoch's
//! total neural batch count, so both streams finish together.
//!
//! The two streams take separate SGD steps. A CE step scales the
//! cross-entropy gradient by `1 − λ` and updates the whole CNN. A DCCA step
//! scales the DCCA gradient by `λ`, updates both sub-networks and pushes the
//! CNN-view gradient back through the V1 block only.

mod checkpoint;
mod config;
mod datasets;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::cca::{build_dcca_branch, dcca_objective, CcaConfig, ViewBatch};
use crate::data::LabeledSet;
use crate::error::{Error, Result};
use crate::eval::evaluate;
use crate::nn::{build_cornetz, cross_entropy_loss, sgd_step, Network, V1_TAP};
use crate::rng::{stream, SeededRng, Stream};

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, Checkpoint};
pub use config::{CifarSource, DataSpec, EpochRange, ExperimentConfig, NeuralSource};
pub use datasets::{
    pair_by_id, read_stimuli, resolve, resolve_labeled, resolve_neural, write_stimuli, Datasets, NeuralPairs,
};

/// `λ·dcca + (1−λ)·ce`.
pub fn joint_loss(lambda: f64, ce: f64, dcca: f64) -> f64 {
    if lambda == 0.0 {
        ce
    } else if lambda == 1.0 {
        dcca
    } else {
        lambda * dcca + (1.0 - lambda) * ce
    }
}

/// One JSON-lines record per epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    /// 1-based index of the finished epoch.
    pub epoch: usize,
    pub lambda: f64,
    pub seed: u64,
    pub ce_loss: Option<f64>,
    pub dcca_loss: Option<f64>,
    pub val_acc: f64,
    pub val_superclass_acc: f64,
    pub mean_cca_corr: Option<f64>,
    pub cifar_steps: u64,
    pub neural_steps: u64,
}

/// The two DCCA sub-networks.
#[derive(Debug, Clone)]
pub struct DccaBranch {
    pub fx: Network,
    pub fy: Network,
}

#[derive(Debug, Clone)]
pub struct TrainState {
    pub cnn: Network,
    pub dcca: Option<DccaBranch>,
    /// Completed epochs.
    pub epoch: usize,
    pub cifar_steps: u64,
    pub neural_steps: u64,
    /// Shuffles the labeled set and drives CNN dropout in CE steps.
    pub cifar_rng: SeededRng,
    /// Shuffles neural pairs and drives dropout in DCCA steps.
    pub neural_rng: SeededRng,
    pub history: Vec<EpochMetrics>,
}

impl TrainState {
    /// Fresh networks. The DCCA branch exists only when a neural view of
    /// width `neural_dim` is supplied, and is drawn from its own stream.
    pub fn new(
        cfg: &ExperimentConfig,
        num_classes: usize,
        input_shape: &[usize],
        neural_dim: Option<usize>,
    ) -> Result<Self> {
        cfg.validate()?;
        let mut init = stream(cfg.seed, Stream::CnnInit);
        let cnn = build_cornetz(num_classes, input_shape, &cfg.cornet, &mut init)?;
        let dcca = match neural_dim {
            Some(d_y) => {
                let tap = cnn.tap(V1_TAP).expect("CORnet-Z has a V1 tap");
                let d_x: usize = cnn.layers()[tap - 1].out_shape().iter().product();
                let mut rng = stream(cfg.seed, Stream::DccaInit);
                let (fx, fy) = build_dcca_branch(d_x, d_y, &cfg.dcca, cfg.c, &mut rng)?;
                Some(DccaBranch { fx, fy })
            }
            None => None,
        };
        Ok(Self {
            cnn,
            dcca,
            epoch: 0,
            cifar_steps: 0,
            neural_steps: 0,
            cifar_rng: stream(cfg.seed, Stream::Cifar),
            neural_rng: stream(cfg.seed, Stream::Neural),
            history: Vec::new(),
        })
    }

    pub fn for_datasets(cfg: &ExperimentConfig, data: &Datasets) -> Result<Self> {
        Self::new(
            cfg,
            data.train.num_classes(),
            &data.input_shape(),
            data.neural.as_ref().map(NeuralPairs::dim),
        )
    }
}

/// Batches of neural row indices, reshuffled at the start of each cycle.
/// A short final batch is topped up from the start of the same cycle's
/// permutation so every batch has `batch` rows (or all rows when fewer
/// exist).
struct NeuralBatches {
    n: usize,
    batch: usize,
    perm: Vec<usize>,
    pos: usize,
}

impl NeuralBatches {
    fn new(n: usize, batch: usize) -> Self {
        Self { n, batch, perm: Vec::new(), pos: n }
    }

    fn per_cycle(n: usize, batch: usize) -> usize {
        n.div_ceil(batch)
    }

    fn next(&mut self, rng: &mut SeededRng) -> Vec<usize> {
        if self.pos >= self.n {
            self.perm = (0..self.n).collect();
            self.perm.shuffle(rng);
            self.pos = 0;
        }
        let end = (self.pos + self.batch).min(self.n);
        let mut idx = self.perm[self.pos..end].to_vec();
        if idx.len() < self.batch && self.n >= self.batch {
            idx.extend_from_slice(&self.perm[..self.batch - idx.len()]);
        }
        self.pos = end;
        idx
    }
}

/// Neural batches to run after labeled batch `i` of `b`, `t` in total.
pub fn interleave_quota(t: usize, b: usize, i: usize) -> usize {
    (t * (i + 1)) / b - (t * i) / b
}

fn ce_step(state: &mut TrainState, cfg: &ExperimentConfig, train: &LabeledSet, idx: &[usize]) -> Result<f64> {
    let (x, y) = train.batch(idx);
    let logits = state.cnn.forward(&x, Some(&mut state.cifar_rng))?;
    let (loss, mut grad) = cross_entropy_loss(&logits, &y)?;
    if !loss.is_finite() {
        state.cnn.clear_caches();
        return Err(Error::NonFiniteLoss {
            epoch: state.epoch + 1,
            step: state.cifar_steps,
            what: "cross-entropy".into(),
        });
    }
    grad.scale(1.0 - cfg.lambda);
    let back = state.cnn.backward(grad)?;
    sgd_step(&mut state.cnn, &back.params, cfg.lr_cnn, state.cifar_steps)?;
    state.cifar_steps += 1;
    Ok(loss)
}

/// One DCCA step; returns (loss, mean batch correlation).
fn dcca_step(state: &mut TrainState, cfg: &ExperimentConfig, pairs: &NeuralPairs, idx: &[usize]) -> Result<(f64, f64)> {
    let tap = state.cnn.tap(V1_TAP).expect("CORnet-Z has a V1 tap");
    let branch = state.dcca.as_mut().ok_or_else(|| Error::State("no DCCA branch".into()))?;
    let x = pairs.images.select_rows(idx);
    let y = pairs.responses.select_rows(idx);
    let v1 = state.cnn.forward_span(0..tap, &x, Some(&mut state.neural_rng))?;
    let v1_shape = v1.shape().to_vec();
    let hx = branch.fx.forward(&v1.flatten_batch(), Some(&mut state.neural_rng))?;
    let hy = branch.fy.forward(&y, Some(&mut state.neural_rng))?;
    let objective = ViewBatch::from_tensors(&hx, &hy)
        .and_then(|b| dcca_objective(&b, &CcaConfig { c: cfg.c, reg: cfg.reg }));
    let objective = match objective {
        Ok(o) if o.loss.is_finite() => o,
        other => {
            state.cnn.clear_caches();
            branch.fx.clear_caches();
            branch.fy.clear_caches();
            let what = match other {
                Err(e) => format!("DCCA: {e}"),
                Ok(o) => format!("DCCA loss {}", o.loss),
            };
            return Err(Error::NonFiniteLoss { epoch: state.epoch + 1, step: state.neural_steps, what });
        }
    };
    let mut gx = objective.grad_x_tensor();
    let mut gy = objective.grad_y_tensor();
    gx.scale(cfg.lambda);
    gy.scale(cfg.lambda);
    let bx = branch.fx.backward(gx)?;
    let by = branch.fy.backward(gy)?;
    let g_v1 = bx.input.reshape(v1_shape)?;
    let bc = state.cnn.backward_span(0..tap, g_v1)?;
    let step = state.neural_steps;
    sgd_step(&mut branch.fx, &bx.params, cfg.lr_dcca, step)?;
    sgd_step(&mut branch.fy, &by.params, cfg.lr_dcca, step)?;
    sgd_step(&mut state.cnn, &bc.params, cfg.lr_cnn, step)?;
    state.neural_steps += 1;
    Ok((objective.loss, objective.mean_correlation()))
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Runs one epoch and appends its metrics to the history.
pub fn train_epoch(state: &mut TrainState, cfg: &ExperimentConfig, data: &Datasets) -> Result<EpochMetrics> {
    let train = &data.train;
    let n = train.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut state.cifar_rng);
    let n_batches = n.div_ceil(cfg.batch_cifar);

    let neural = data
        .neural
        .as_ref()
        .filter(|_| state.dcca.is_some() && cfg.dcca_active(state.epoch));
    let total_neural = neural.map_or(0, |p| {
        cfg.neural_cycles_per_epoch * NeuralBatches::per_cycle(p.len(), cfg.batch_dcca)
    });
    let mut neural_batches = neural.map(|p| NeuralBatches::new(p.len(), cfg.batch_dcca));

    let (mut ce_losses, mut dcca_losses, mut corrs) = (Vec::new(), Vec::new(), Vec::new());
    for (i, idx) in order.chunks(cfg.batch_cifar).enumerate() {
        if cfg.lambda < 1.0 {
            ce_losses.push(ce_step(state, cfg, train, idx)?);
        }
        if let (Some(pairs), Some(batches)) = (neural, neural_batches.as_mut()) {
            for _ in 0..interleave_quota(total_neural, n_batches, i) {
                let nidx = batches.next(&mut state.neural_rng);
                let (loss, corr) = dcca_step(state, cfg, pairs, &nidx)?;
                dcca_losses.push(loss);
                corrs.push(corr);
            }
        }
    }

    let report = evaluate(&state.cnn, &data.test)?;
    state.epoch += 1;
    let metrics = EpochMetrics {
        epoch: state.epoch,
        lambda: cfg.lambda,
        seed: cfg.seed,
        ce_loss: mean(&ce_losses),
        dcca_loss: mean(&dcca_losses),
        val_acc: report.exact_acc,
        val_superclass_acc: report.super_acc,
        mean_cca_corr: mean(&corrs),
        cifar_steps: state.cifar_steps,
        neural_steps: state.neural_steps,
    };
    state.history.push(metrics.clone());
    Ok(metrics)
}

/// Trains until `cfg.epochs` epochs are complete, calling `on_epoch` after
/// each one (e.g. to log metrics or write a checkpoint).
pub fn train_until(
    state: &mut TrainState,
    cfg: &ExperimentConfig,
    data: &Datasets,
    mut on_epoch: impl FnMut(&TrainState, &EpochMetrics) -> Result<()>,
) -> Result<()> {
    while state.epoch < cfg.epochs {
        let m = train_epoch(state, cfg, data)?;
        on_epoch(state, &m)?;
    }
    Ok(())
}

/// A complete run from fresh initialization.
pub fn run_experiment(cfg: &ExperimentConfig, data: &Datasets) -> Result<TrainState> {
    let mut state = TrainState::for_datasets(cfg, data)?;
    train_until(&mut state, cfg, data, |_, _| Ok(()))?;
    Ok(state)
}
