//! Minibatch Adam training with best-validation checkpoint retention.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{make_splits, Dataset, SplitScheme, Splits};
use crate::design::assignment;
use crate::error::{Error, Result};
use crate::eval::{argmax, check_compatible, evaluate_grids, EvalReport};
use crate::features::{Band, PatchGrid};
use crate::model::{Example, ModelConfig, QmcNet, StepKey, DEFAULT_DROPOUT, DEFAULT_HIDDEN};
use crate::nn::Adam;
use crate::par::{self, Exec};

pub const LOG_HEADER: &str = "epoch,train_loss,train_acc,val_loss,val_acc";
pub const PLOT_HEADER: &str = "epoch,train_loss,val_loss,train_acc,val_acc,best_val_acc,best_val_loss";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub patch_size: usize,
    pub seed: u64,
    pub residual: bool,
    /// Circuit assignment name, see [`crate::design::assignment`].
    pub assignment: String,
    /// Replace every circuit by `tanh` of its projection.
    pub no_quantum: bool,
    /// Subset of bands to use; all six when absent.
    pub bands: Option<Vec<Band>>,
    pub split: SplitScheme,
    pub hidden: usize,
    pub dropout: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::full()
    }
}

impl TrainConfig {
    /// Full-scale settings: 100 epochs, batch 128, lr 5e-4, 8x8 patches.
    pub fn full() -> Self {
        Self {
            epochs: 100,
            batch_size: 128,
            lr: Adam::DEFAULT_LR,
            patch_size: 8,
            seed: 0,
            residual: false,
            assignment: "eurosat".into(),
            no_quantum: false,
            bands: None,
            split: SplitScheme::Eurosat,
            hidden: DEFAULT_HIDDEN,
            dropout: DEFAULT_DROPOUT,
        }
    }

    /// [`TrainConfig::full`] for 28x28 six-class imagery: 7x7 patches, the
    /// `sat6` assignment and the 10% subsample split.
    pub fn sat6() -> Self {
        Self { patch_size: 7, assignment: "sat6".into(), split: SplitScheme::Sat6, ..Self::full() }
    }

    /// Desk-scale settings for 16x16 synthetic images split 4:1:1: 15
    /// epochs, batch 16, 4x4 patches, small circuits. Optimizer and head
    /// match [`TrainConfig::full`].
    pub fn desk() -> Self {
        Self {
            epochs: 15,
            batch_size: 16,
            patch_size: 4,
            assignment: "toy".into(),
            split: SplitScheme::Custom { train: 4.0 / 6.0, val: 1.0 / 6.0, test: 1.0 / 6.0 },
            ..Self::full()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        if self.batch_size < 2 {
            return Err(Error::invalid("batch size must be at least 2"));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid("learning rate must be finite and non-negative"));
        }
        Ok(())
    }

    pub fn model_config(&self, num_classes: usize) -> Result<ModelConfig> {
        let mut c = ModelConfig::new(self.patch_size, assignment(&self.assignment)?, num_classes);
        if let Some(keep) = &self.bands {
            c = c.with_bands(keep)?;
        }
        c.residual = self.residual;
        c.quantum = !self.no_quantum;
        c.hidden = self.hidden;
        c.dropout = self.dropout;
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Model at the best validation epoch.
    pub best: QmcNet,
    pub best_epoch: usize,
    /// Optimizer step count at the best epoch.
    pub best_step: u64,
    pub last: QmcNet,
    pub log: Vec<EpochLog>,
    /// `(val_acc, val_loss)` of the retained checkpoint after each epoch.
    pub best_history: Vec<(f64, f64)>,
    pub splits: Splits,
}

/// Shuffled minibatches for one epoch. A trailing batch of one sample is
/// merged into the previous batch (batch norm needs two); indices inside a
/// batch are sorted.
pub fn epoch_batches(indices: &[usize], batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut order = indices.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    order.shuffle(&mut rng);
    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    if batches.len() > 1 && batches.last().is_some_and(|b| b.len() == 1) {
        let tail = batches.pop().expect("non-empty");
        batches.last_mut().expect("non-empty").extend(tail);
    }
    for b in &mut batches {
        b.sort_unstable();
    }
    batches
}

/// Prepared patch grids for every image in the dataset.
pub fn prepare_all(model: &QmcNet, dataset: &Dataset, exec: Exec) -> Result<Vec<PatchGrid>> {
    par::try_map_range(exec, dataset.len(), |i| model.prepare(&dataset.images[i]))
}

fn better(candidate: (f64, f64), best: (f64, f64)) -> bool {
    candidate.0 > best.0 || (candidate.0 == best.0 && candidate.1 < best.1)
}

/// Trains on the training split and keeps the checkpoint with the highest
/// validation accuracy (ties: lower validation loss).
pub fn train(config: &TrainConfig, dataset: &Dataset, exec: Exec) -> Result<TrainOutcome> {
    config.validate()?;
    let splits = make_splits(&dataset.labels(), dataset.num_classes(), config.split, config.seed)?;
    train_on_splits(config, dataset, splits, exec)
}

pub fn train_on_splits(config: &TrainConfig, dataset: &Dataset, splits: Splits, exec: Exec) -> Result<TrainOutcome> {
    config.validate()?;
    if config.batch_size > splits.train.len() {
        return Err(Error::invalid(format!(
            "batch size {} exceeds training set size {}",
            config.batch_size,
            splits.train.len()
        )));
    }
    if splits.val.is_empty() {
        return Err(Error::invalid("training needs a non-empty validation split"));
    }
    let mut model = QmcNet::new(config.model_config(dataset.num_classes())?, config.seed)?.with_exec(exec);
    check_compatible(&model, dataset)?;
    let grids = prepare_all(&model, dataset, exec)?;
    let labels = dataset.labels();
    let val_grids: Vec<&PatchGrid> = splits.val.iter().map(|&i| &grids[i]).collect();
    let val_labels: Vec<usize> = splits.val.iter().map(|&i| labels[i]).collect();

    let mut params = model.params.trainable();
    let mut adam = Adam::new(params.len(), config.lr);
    let mut log = Vec::with_capacity(config.epochs);
    let mut best: Option<(QmcNet, usize, u64, (f64, f64))> = None;
    let mut best_history = Vec::with_capacity(config.epochs);
    let mut step = 0u64;

    for epoch in 1..=config.epochs {
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for batch_idx in epoch_batches(&splits.train, config.batch_size, config.seed, epoch) {
            let batch: Vec<Example> = batch_idx
                .iter()
                .map(|&i| Example { grid: &grids[i], label: labels[i], id: i as u64 })
                .collect();
            let out = model.train_batch(&batch, StepKey { seed: config.seed, step })?;
            loss_sum += out.loss * batch.len() as f64;
            correct += out.logits.iter().zip(&batch).filter(|(l, e)| argmax(l) == e.label).count();
            adam.update(&mut params, &out.grad.trainable())?;
            model.params.set_trainable(&params)?;
            step += 1;
        }
        let val: EvalReport = evaluate_grids(&model, &val_grids, &val_labels)?;
        let val_loss = val.loss.expect("evaluate_grids sets loss");
        let entry = EpochLog {
            epoch,
            train_loss: loss_sum / splits.train.len() as f64,
            train_acc: correct as f64 / splits.train.len() as f64,
            val_loss,
            val_acc: val.accuracy,
        };
        log.push(entry);
        let score = (val.accuracy, val_loss);
        if best.as_ref().is_none_or(|b| better(score, b.3)) {
            best = Some((model.clone(), epoch, step, score));
        }
        best_history.push(best.as_ref().expect("set above").3);
    }
    let (best, best_epoch, best_step, _) = best.expect("at least one epoch");
    Ok(TrainOutcome { best, best_epoch, best_step, last: model, log, best_history, splits })
}

/// Training log as CSV with header `epoch,train_loss,train_acc,val_loss,val_acc`.
pub fn log_csv(log: &[EpochLog]) -> String {
    let mut s = String::from(LOG_HEADER);
    s.push('\n');
    for e in log {
        writeln!(s, "{},{:.10},{:.6},{:.10},{:.6}", e.epoch, e.train_loss, e.train_acc, e.val_loss, e.val_acc)
            .expect("writing to a String");
    }
    s
}

/// Loss and accuracy curves plus the retained checkpoint's scores.
pub fn plot_csv(outcome: &TrainOutcome) -> String {
    let mut s = String::from(PLOT_HEADER);
    s.push('\n');
    for (e, (ba, bl)) in outcome.log.iter().zip(&outcome.best_history) {
        writeln!(
            s,
            "{},{:.10},{:.10},{:.6},{:.6},{:.6},{:.10}",
            e.epoch, e.train_loss, e.val_loss, e.train_acc, e.val_acc, ba, bl
        )
        .expect("writing to a String");
    }
    s
}
