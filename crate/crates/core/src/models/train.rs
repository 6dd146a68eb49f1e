//! Training loops: seeded mini-batch SGD with early stopping on validation
//! accuracy, best-epoch checkpoint restoration and divergence flagging.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataprep::LabeledDataset;
use crate::error::{Error, Result};
use crate::models::dnn::{DnnModel, LossKind};
use crate::models::vae::{beta_warmup, vae_loss, ClassifierHead, VaeModel};
use crate::nn::layers::Mode;
use crate::nn::loss::{focal_loss, softmax_ce_ls};
use crate::nn::optim::{Optimizer, OptimizerConfig, OptimizerKind};
use crate::nn::schedule::Schedule;
use crate::nn::tensor::Tensor;
use crate::util::derive_seed;

/// Borrowed view over a subset of dataset rows.
#[derive(Clone, Copy)]
pub struct DataView<'a> {
    pub ds: &'a LabeledDataset,
    pub rows: &'a [usize],
}

impl<'a> DataView<'a> {
    pub fn new(ds: &'a LabeledDataset, rows: &'a [usize]) -> Self {
        DataView { ds, rows }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Gather the given positions (indices into `rows`) into a batch.
    pub fn gather(&self, positions: &[usize]) -> (Tensor, Vec<u8>) {
        let cols = self.ds.cols;
        let mut features = Vec::with_capacity(positions.len() * cols);
        let mut targets = Vec::with_capacity(positions.len());
        for &p in positions {
            let row = self.rows[p];
            features.extend_from_slice(self.ds.row(row));
            targets.push(self.ds.y[row]);
        }
        (
            Tensor::from_vec(positions.len(), cols, features).unwrap(),
            targets,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainBudget {
    pub max_epochs: usize,
    pub patience: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_acc: f64,
    pub lr_multiplier: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    pub best_epoch: usize,
    pub stopped_epoch: usize,
    pub best_val_acc: f64,
    pub diverged: bool,
    pub wall_ms: u128,
}

impl TrainReport {
    fn empty() -> Self {
        TrainReport {
            epochs: Vec::new(),
            best_epoch: 0,
            stopped_epoch: 0,
            best_val_acc: 0.0,
            diverged: false,
            wall_ms: 0,
        }
    }
}

/// Signal returned by the per-epoch callback; `Stop` aborts the run (used by
/// the HPO pruner).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainControl {
    Continue,
    Stop,
}

/// No-op epoch callback.
pub fn no_callback(_epoch: usize, _val_acc: f64) -> TrainControl {
    TrainControl::Continue
}

fn batch_accuracy(logits: &Tensor, targets: &[u8]) -> usize {
    let mut correct = 0;
    for (r, &y) in targets.iter().enumerate() {
        let row = logits.row(r);
        let mut best = 0;
        for j in 1..row.len() {
            if row[j] > row[best] {
                best = j;
            }
        }
        if best == y as usize {
            correct += 1;
        }
    }
    correct
}

fn epoch_batches(n: usize, batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(batch_size).map(|c| c.to_vec()).collect()
}

const EVAL_BATCH: usize = 512;

/// Eval-mode accuracy of a DNN over a view.
pub fn eval_dnn_accuracy(model: &mut DnnModel, view: &DataView) -> Result<f64> {
    let mut correct = 0;
    let positions: Vec<usize> = (0..view.len()).collect();
    for chunk in positions.chunks(EVAL_BATCH) {
        let (x, y) = view.gather(chunk);
        let logits = model.forward(&x, Mode::Eval)?;
        correct += batch_accuracy(&logits, &y);
    }
    Ok(correct as f64 / view.len().max(1) as f64)
}

/// Eval-mode accuracy of the VAE's own head on the latent mean.
pub fn eval_vae_accuracy(model: &mut VaeModel, view: &DataView) -> Result<f64> {
    let mut correct = 0;
    let positions: Vec<usize> = (0..view.len()).collect();
    for chunk in positions.chunks(EVAL_BATCH) {
        let (x, y) = view.gather(chunk);
        let fwd = model.forward(&x, Mode::Eval, None)?;
        correct += batch_accuracy(&fwd.logits, &y);
    }
    Ok(correct as f64 / view.len().max(1) as f64)
}

/// Validation objective for VAE training.
pub enum ValMetric<'a> {
    /// Accuracy on one view.
    Single(DataView<'a>),
    /// Mean of the two per-domain accuracies, equally weighted regardless of
    /// row counts.
    MeanPerDomain(DataView<'a>, DataView<'a>),
}

/// Mini-batch training of the residual DNN with early stopping on validation
/// accuracy. Restores the best-epoch state before returning. A non-finite
/// training loss aborts the run with `diverged` set.
pub fn train_dnn(
    model: &mut DnnModel,
    train: DataView,
    val: DataView,
    budget: TrainBudget,
    seed: u64,
    mut on_epoch: impl FnMut(usize, f64) -> TrainControl,
) -> Result<TrainReport> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::invalid("training and validation views must be non-empty"));
    }
    let start = Instant::now();
    let cfg = model.config.clone();
    let mut optimizer = Optimizer::new(&cfg.optimizer)?;
    let mut schedule = Schedule::new(cfg.schedule, budget.max_epochs);
    let mut report = TrainReport::empty();
    let mut best_snapshot = model.snapshot();
    let mut best_val = f64::NEG_INFINITY;
    let mut bad_epochs = 0;

    'epochs: for epoch in 0..budget.max_epochs {
        let mult = schedule.multiplier_for_epoch(epoch);
        let mut batch_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 5000 + epoch as u64));
        let mut loss_sum = 0.0;
        let mut correct = 0;
        for batch in epoch_batches(train.len(), cfg.batch_size, &mut batch_rng) {
            let (x, y) = train.gather(&batch);
            model.zero_grads();
            let logits = model.forward(&x, Mode::Train)?;
            let loss_out = match cfg.loss {
                LossKind::CeLs { alpha } => softmax_ce_ls(&logits, &y, alpha)?,
                LossKind::Focal { gamma } => focal_loss(&logits, &y, gamma)?,
            };
            if !loss_out.value.is_finite() {
                model.restore(&best_snapshot);
                report.diverged = true;
                report.stopped_epoch = epoch;
                break 'epochs;
            }
            loss_sum += loss_out.value * y.len() as f64;
            correct += batch_accuracy(&logits, &y);
            model.backward(&loss_out.grad);
            let mut params = model.params_mut();
            optimizer.apply_l2_decay(&mut params);
            optimizer.step(&mut params, mult);
        }
        let val_acc = eval_dnn_accuracy(model, &val)?;
        schedule.observe(val_acc);
        report.epochs.push(EpochStats {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            train_acc: correct as f64 / train.len() as f64,
            val_acc,
            lr_multiplier: mult,
        });
        report.stopped_epoch = epoch;

        if val_acc > best_val {
            best_val = val_acc;
            report.best_epoch = epoch;
            best_snapshot = model.snapshot();
            bad_epochs = 0;
        } else {
            bad_epochs += 1;
            if bad_epochs > budget.patience {
                break;
            }
        }
        if on_epoch(epoch, val_acc) == TrainControl::Stop {
            break;
        }
    }

    model.restore(&best_snapshot);
    report.best_val_acc = if best_val.is_finite() { best_val } else { 0.0 };
    report.wall_ms = start.elapsed().as_millis();
    Ok(report)
}

/// Joint VAE training (encoder + decoder + head) with the warm-up-scheduled
/// KL weight. Used both for the single-system models and phase 1 of the
/// combined model; the two differ only in their views and metric.
pub fn train_vae(
    model: &mut VaeModel,
    train: DataView,
    metric: ValMetric,
    budget: TrainBudget,
    seed: u64,
    mut on_epoch: impl FnMut(usize, f64) -> TrainControl,
) -> Result<TrainReport> {
    if train.is_empty() {
        return Err(Error::invalid("training view must be non-empty"));
    }
    let start = Instant::now();
    let cfg = model.config.clone();
    let mut optimizer = Optimizer::new(&cfg.optimizer)?;
    let mut schedule = Schedule::new(cfg.schedule, budget.max_epochs);
    let mut eps_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x5EED));
    let mut report = TrainReport::empty();
    let mut best_snapshot = model.snapshot();
    let mut best_val = f64::NEG_INFINITY;
    let mut bad_epochs = 0;

    'epochs: for epoch in 0..budget.max_epochs {
        let mult = schedule.multiplier_for_epoch(epoch);
        let beta_eff = beta_warmup(cfg.beta, cfg.beta_warmup_epochs, epoch);
        let mut batch_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 6000 + epoch as u64));
        let mut loss_sum = 0.0;
        let mut correct = 0;
        for batch in epoch_batches(train.len(), cfg.batch_size, &mut batch_rng) {
            let (x, y) = train.gather(&batch);
            model.zero_grads();
            let fwd = model.forward(&x, Mode::Train, Some(&mut eps_rng))?;
            let (parts, grads) = vae_loss(&x, &fwd, &y, beta_eff, cfg.lambda_rcst, cfg.lambda_clf)?;
            if !parts.total.is_finite() {
                model.restore(&best_snapshot);
                report.diverged = true;
                report.stopped_epoch = epoch;
                break 'epochs;
            }
            loss_sum += parts.total * y.len() as f64;
            correct += batch_accuracy(&fwd.logits, &y);
            model.backward(&grads);
            let mut params = model.params_mut();
            optimizer.apply_l2_decay(&mut params);
            optimizer.step(&mut params, mult);
        }
        let val_acc = match &metric {
            ValMetric::Single(view) => eval_vae_accuracy(model, view)?,
            ValMetric::MeanPerDomain(a, b) => {
                (eval_vae_accuracy(model, a)? + eval_vae_accuracy(model, b)?) / 2.0
            }
        };
        schedule.observe(val_acc);
        report.epochs.push(EpochStats {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            train_acc: correct as f64 / train.len() as f64,
            val_acc,
            lr_multiplier: mult,
        });
        report.stopped_epoch = epoch;

        if val_acc > best_val {
            best_val = val_acc;
            report.best_epoch = epoch;
            best_snapshot = model.snapshot();
            bad_epochs = 0;
        } else {
            bad_epochs += 1;
            if bad_epochs > budget.patience {
                break;
            }
        }
        if on_epoch(epoch, val_acc) == TrainControl::Stop {
            break;
        }
    }

    model.restore(&best_snapshot);
    report.best_val_acc = if best_val.is_finite() { best_val } else { 0.0 };
    report.wall_ms = start.elapsed().as_millis();
    Ok(report)
}

/// Eval-mode latent means of every row in a view.
pub fn encode_latent_mu(model: &mut VaeModel, view: &DataView) -> Result<(Tensor, Vec<u8>)> {
    let d_z = model.d_z();
    let mut data = Vec::with_capacity(view.len() * d_z);
    let mut targets = Vec::with_capacity(view.len());
    let positions: Vec<usize> = (0..view.len()).collect();
    for chunk in positions.chunks(EVAL_BATCH) {
        let (x, y) = view.gather(chunk);
        let mu = model.latent_mu(&x)?;
        data.extend_from_slice(mu.data());
        targets.extend(y);
    }
    Ok((Tensor::from_vec(view.len(), d_z, data)?, targets))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadTrainConfig {
    pub optimizer: OptimizerConfig,
    pub batch_size: usize,
}

impl Default for HeadTrainConfig {
    fn default() -> Self {
        HeadTrainConfig {
            optimizer: OptimizerConfig {
                kind: OptimizerKind::Adam,
                lr: 1e-3,
                weight_decay: 0.0,
                momentum: 0.0,
            },
            batch_size: 64,
        }
    }
}

/// Phase-2 head training on precomputed latent means. The encoder never
/// appears here, so its parameters cannot change; callers assert the freeze
/// contract by hashing the encoder blob around this call.
pub fn train_head(
    head: &mut ClassifierHead,
    train_z: &Tensor,
    train_y: &[u8],
    val_z: &Tensor,
    val_y: &[u8],
    cfg: &HeadTrainConfig,
    budget: TrainBudget,
    seed: u64,
) -> Result<TrainReport> {
    if train_y.is_empty() || val_y.is_empty() {
        return Err(Error::invalid("head training needs non-empty views"));
    }
    let start = Instant::now();
    let mut optimizer = Optimizer::new(&cfg.optimizer)?;
    let mut report = TrainReport::empty();
    let mut best_snapshot = head.snapshot();
    let mut best_val = f64::NEG_INFINITY;
    let mut bad_epochs = 0;

    let gather = |z: &Tensor, y: &[u8], idx: &[usize]| {
        let mut data = Vec::with_capacity(idx.len() * z.cols());
        let mut t = Vec::with_capacity(idx.len());
        for &i in idx {
            data.extend_from_slice(z.row(i));
            t.push(y[i]);
        }
        (Tensor::from_vec(idx.len(), z.cols(), data).unwrap(), t)
    };

    'epochs: for epoch in 0..budget.max_epochs {
        let mut batch_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 7000 + epoch as u64));
        let mut loss_sum = 0.0;
        let mut correct = 0;
        for batch in epoch_batches(train_y.len(), cfg.batch_size, &mut batch_rng) {
            let (x, y) = gather(train_z, train_y, &batch);
            head.zero_grads();
            let logits = head.forward(&x);
            let loss_out = softmax_ce_ls(&logits, &y, 0.0)?;
            if !loss_out.value.is_finite() {
                head.restore(&best_snapshot);
                report.diverged = true;
                report.stopped_epoch = epoch;
                break 'epochs;
            }
            loss_sum += loss_out.value * y.len() as f64;
            correct += batch_accuracy(&logits, &y);
            head.backward(&loss_out.grad);
            let mut params = head.params_mut();
            optimizer.apply_l2_decay(&mut params);
            optimizer.step(&mut params, 1.0);
        }
        let val_positions: Vec<usize> = (0..val_y.len()).collect();
        let mut val_correct = 0;
        for chunk in val_positions.chunks(EVAL_BATCH) {
            let (x, y) = gather(val_z, val_y, chunk);
            let logits = head.forward(&x);
            val_correct += batch_accuracy(&logits, &y);
        }
        let val_acc = val_correct as f64 / val_y.len() as f64;
        report.epochs.push(EpochStats {
            epoch,
            train_loss: loss_sum / train_y.len() as f64,
            train_acc: correct as f64 / train_y.len() as f64,
            val_acc,
            lr_multiplier: 1.0,
        });
        report.stopped_epoch = epoch;

        if val_acc > best_val {
            best_val = val_acc;
            report.best_epoch = epoch;
            best_snapshot = head.snapshot();
            bad_epochs = 0;
        } else {
            bad_epochs += 1;
            if bad_epochs > budget.patience {
                break;
            }
        }
    }

    head.restore(&best_snapshot);
    report.best_val_acc = if best_val.is_finite() { best_val } else { 0.0 };
    report.wall_ms = start.elapsed().as_millis();
    Ok(report)
}

/// Argmax predictions of a DNN over a view, in view order.
pub fn predict_dnn(model: &mut DnnModel, view: &DataView) -> Result<Vec<u8>> {
    let mut preds = Vec::with_capacity(view.len());
    let positions: Vec<usize> = (0..view.len()).collect();
    for chunk in positions.chunks(EVAL_BATCH) {
        let (x, _) = view.gather(chunk);
        let logits = model.forward(&x, Mode::Eval)?;
        for r in 0..logits.rows() {
            let row = logits.row(r);
            let mut best = 0;
            for j in 1..row.len() {
                if row[j] > row[best] {
                    best = j;
                }
            }
            preds.push(best as u8);
        }
    }
    Ok(preds)
}

/// Argmax predictions of a head over latent means from the encoder.
pub fn predict_vae_head(
    model: &mut VaeModel,
    head: &mut ClassifierHead,
    view: &DataView,
) -> Result<Vec<u8>> {
    let mut preds = Vec::with_capacity(view.len());
    let positions: Vec<usize> = (0..view.len()).collect();
    for chunk in positions.chunks(EVAL_BATCH) {
        let (x, _) = view.gather(chunk);
        let mu = model.latent_mu(&x)?;
        let logits = head.forward(&mu);
        for r in 0..logits.rows() {
            let row = logits.row(r);
            let mut best = 0;
            for j in 1..row.len() {
                if row[j] > row[best] {
                    best = j;
                }
            }
            preds.push(best as u8);
        }
    }
    Ok(preds)
}
