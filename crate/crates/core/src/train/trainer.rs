use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::early_stop::{EarlyStopping, Verdict};
use super::evaluate::{evaluate, Forecaster};
use super::optim::{AdamW, AdamWConfig};
use super::schedule::cosine_lr;
use crate::data::{Scaler, WindowSample};
use crate::error::{Error, Result};
use crate::model::{Batch, ExoStModel};
use crate::tensor::{Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    Mae,
    L2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_max: f64,
    pub lr_min: f64,
    pub patience: usize,
    pub seed: u64,
    pub loss: LossKind,
    pub optimizer: AdamWConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 500,
            batch_size: 512,
            lr_max: 1e-2,
            lr_min: 1e-7,
            patience: 30,
            seed: 0,
            loss: LossKind::Mae,
            optimizer: AdamWConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.patience == 0 {
            return Err(Error::Config("epochs, batch size and patience must be positive".into()));
        }
        if !(self.lr_min < self.lr_max) || self.lr_min < 0.0 {
            return Err(Error::Config(format!(
                "need 0 ≤ lr_min < lr_max, got {} and {}",
                self.lr_min, self.lr_max
            )));
        }
        Ok(())
    }

    /// Requested batch size, clamped so every epoch makes at least two updates.
    pub fn effective_batch(&self, samples: usize) -> usize {
        self.batch_size.min(samples.div_ceil(2)).max(1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub lr: f64,
    pub val_mae: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_mae: f64,
    pub stopped_early: bool,
    /// Wall-clock seconds per epoch; kept apart from the reproducible history.
    pub epoch_seconds: Vec<f64>,
}

fn loss_on(tape: &mut Tape, y_hat: Var, y: Var, kind: LossKind) -> crate::tensor::Result<Var> {
    let d = tape.sub(y_hat, y)?;
    let e = match kind {
        LossKind::Mae => tape.abs(d),
        LossKind::L2 => tape.mul(d, d)?,
    };
    tape.mean_all(e)
}

/// One optimization step on `batch`; returns the batch loss.
fn step(
    model: &mut ExoStModel,
    opt: &mut AdamW,
    batch: &Batch,
    lr: f64,
    loss: LossKind,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let mut tape = Tape::new();
    let bound = model.params().bind(&mut tape);
    let x = tape.constant(batch.x.clone());
    let ep = tape.constant(batch.e_past.clone());
    let ef = tape.constant(batch.e_future.clone());
    let y = tape.constant(batch.y.clone());
    let out = model.forward(&mut tape, &bound, x, ep, ef, true, rng)?;
    let l = loss_on(&mut tape, out.y_hat, y, loss)?;
    let value = tape.value(l).data()[0];
    if !value.is_finite() {
        return Err(Error::NonFinite {
            what: "loss",
            epoch: 0,
            batch: 0,
        });
    }
    tape.backward(l)?;
    let grads: Vec<Option<&[f64]>> = bound.vars().iter().map(|&v| tape.grad(v)).collect();
    opt.step(model.params_mut(), &grads, lr).map_err(|_| Error::NonFinite {
        what: "gradient",
        epoch: 0,
        batch: 0,
    })?;
    Ok(value)
}

/// Mini-batch training with cosine schedule and early stopping on
/// denormalized validation MAE. The best parameters are restored on exit.
pub fn train(
    model: &mut ExoStModel,
    train_set: &[WindowSample],
    val_set: &[WindowSample],
    scaler: &Scaler,
    config: &TrainConfig,
) -> Result<TrainReport> {
    config.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Config("training and validation sets must be non-empty".into()));
    }
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x9e37_79b9_7f4a_7c15));
    let mut opt = AdamW::new(model.params(), config.optimizer);
    let mut stopper = EarlyStopping::new(config.patience);
    let bs = config.effective_batch(train_set.len());
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut best = model.params().clone();
    let mut history = Vec::new();
    let mut epoch_seconds = Vec::new();
    let mut stopped_early = false;

    for epoch in 0..config.epochs {
        let started = Instant::now();
        let lr = cosine_lr(epoch, config.epochs, config.lr_max, config.lr_min);
        order.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        for (b, chunk) in order.chunks(bs).enumerate() {
            let samples: Vec<&WindowSample> = chunk.iter().map(|&i| &train_set[i]).collect();
            let batch = Batch::from_samples(&samples)?;
            let loss = step(model, &mut opt, &batch, lr, config.loss, &mut dropout_rng).map_err(|e| match e {
                Error::NonFinite { what, .. } => Error::NonFinite { what, epoch, batch: b },
                other => other,
            })?;
            total += loss * chunk.len() as f64;
        }
        let val_mae = evaluate(&*model as &dyn Forecaster, val_set, scaler, 1)?.mae;
        if !val_mae.is_finite() {
            return Err(Error::NonFinite {
                what: "validation MAE",
                epoch,
                batch: 0,
            });
        }
        history.push(EpochRecord {
            epoch,
            train_loss: total / train_set.len() as f64,
            lr,
            val_mae,
        });
        let verdict = stopper.observe(epoch, val_mae);
        if verdict == Verdict::Improved {
            best = model.params().clone();
        }
        epoch_seconds.push(started.elapsed().as_secs_f64());
        if verdict == Verdict::Stop {
            stopped_early = true;
            break;
        }
    }
    *model.params_mut() = best;
    Ok(TrainReport {
        history,
        best_epoch: stopper.best_epoch().unwrap_or(0),
        best_val_mae: stopper.best(),
        stopped_early,
        epoch_seconds,
    })
}
