use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Checkpoint, OptimizerState, UNetConfig, UNetModel};
use crate::datapipe::{NormalizationManifest, TrainingExample};
use crate::error::{bail, Error, Result};
use crate::numerics::{adam_step, sgd_step, Tensor};

/// RNG stream used for shuffling and dropout during training.
pub const TRAIN_STREAM: u64 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean MSE over the epoch's training batches, normalized units.
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    /// Optimizer steps taken so far.
    pub steps: u64,
}

/// One record per completed epoch.
///
/// Wall-clock seconds are kept beside the records rather than inside them
/// so that two runs with the same seed produce equal records.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    #[serde(skip)]
    pub wall_clock_s: Vec<f64>,
}

impl TrainHistory {
    pub fn train_losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.train_loss).collect()
    }
}

/// Training aborted; `last_good` holds the state before the failing step.
#[derive(Debug)]
pub struct TrainFailure {
    pub error: Error,
    pub last_good: Box<Checkpoint>,
}

impl std::fmt::Display for TrainFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "training aborted after epoch {}: {}", self.last_good.epoch, self.error)
    }
}

impl std::error::Error for TrainFailure {}

/// Mutable training state: model, optimizer moments, RNG and counters.
pub struct Trainer {
    pub model: UNetModel<f32>,
    pub optimizer: OptimizerState,
    pub rng: ChaCha8Rng,
    pub epoch: usize,
    pub steps: u64,
    pub history: TrainHistory,
}

fn stack(parts: &[&Tensor<f32>], shape: Vec<usize>) -> Result<Tensor<f32>> {
    let mut data = Vec::with_capacity(shape.iter().product());
    for p in parts {
        data.extend_from_slice(p.data());
    }
    Tensor::new(shape, data)
}

/// Stacks examples into `[N, S, S, C]`, `[N, T, V]` and `[N, S, S, 1]`.
pub(crate) fn batch_tensors(batch: &[&TrainingExample]) -> Result<(Tensor<f32>, Tensor<f32>, Tensor<f32>)> {
    let Some(first) = batch.first() else {
        bail!(Data, "empty batch");
    };
    let with_n = |t: &Tensor<f32>| {
        let mut s = vec![batch.len()];
        s.extend_from_slice(t.shape());
        s
    };
    let spatial: Vec<&Tensor<f32>> = batch.iter().map(|e| e.spatial.as_ref()).collect();
    let met: Vec<&Tensor<f32>> = batch.iter().map(|e| &e.met).collect();
    let target: Vec<&Tensor<f32>> = batch.iter().map(|e| &e.target).collect();
    Ok((
        stack(&spatial, with_n(&first.spatial))?,
        stack(&met, with_n(&first.met))?,
        stack(&target, with_n(&first.target))?,
    ))
}

impl Trainer {
    pub fn new(model: UNetModel<f32>) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(model.config().seed);
        rng.set_stream(TRAIN_STREAM);
        let optimizer = OptimizerState::new(&model);
        Self {
            model,
            optimizer,
            rng,
            epoch: 0,
            steps: 0,
            history: TrainHistory::default(),
        }
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Self {
        Self {
            model: ckpt.model,
            optimizer: ckpt.optimizer,
            rng: ckpt.rng,
            epoch: ckpt.epoch,
            steps: ckpt.steps,
            history: TrainHistory::default(),
        }
    }

    pub fn checkpoint(&self, manifest: Option<NormalizationManifest>) -> Checkpoint {
        Checkpoint {
            model: self.model.clone(),
            optimizer: self.optimizer.clone(),
            manifest,
            epoch: self.epoch,
            steps: self.steps,
            rng: self.rng.clone(),
        }
    }

    pub fn config(&self) -> &UNetConfig {
        self.model.config()
    }

    /// One optimizer step on `batch`; returns the batch loss before the update.
    pub fn step(&mut self, batch: &[&TrainingExample]) -> Result<f64> {
        let (spatial, met, target) = batch_tensors(batch)?;
        let (loss, grads) = self
            .model
            .loss_and_grads(&spatial, &met, &target, true, &mut self.rng)?;
        if !loss.is_finite() {
            bail!(Numeric, "loss is {loss} at step {}", self.steps + 1);
        }
        let lr = self.model.config().lr;
        match &mut self.optimizer {
            OptimizerState::Adam { state, hyper } => {
                adam_step(self.model.params_mut(), &grads, state, lr, *hyper)?
            }
            OptimizerState::Sgd => sgd_step(self.model.params_mut(), &grads, lr)?,
        }
        self.steps += 1;
        Ok(loss)
    }

    /// Mean loss over `set` with dropout off, batched by `batch_size`.
    pub fn evaluate(&self, set: &[TrainingExample]) -> Result<f64> {
        evaluate(&self.model, set)
    }

    /// Shuffles, runs one pass over `train` and records the epoch.
    pub fn run_epoch(&mut self, train: &[TrainingExample], val: &[TrainingExample]) -> Result<EpochRecord> {
        let cfg = self.model.config();
        if train.is_empty() {
            bail!(Data, "training set is empty");
        }
        if cfg.batch_size > train.len() {
            bail!(Config, "batch_size {} exceeds {} training examples", cfg.batch_size, train.len());
        }
        let batch_size = cfg.batch_size;
        let started = Instant::now();
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut self.rng);
        let mut weighted = 0.0;
        for chunk in order.chunks(batch_size) {
            let batch: Vec<&TrainingExample> = chunk.iter().map(|&i| &train[i]).collect();
            weighted += self.step(&batch)? * batch.len() as f64;
        }
        let val_loss = if val.is_empty() {
            None
        } else {
            Some(self.evaluate(val)?)
        };
        self.epoch += 1;
        let record = EpochRecord {
            epoch: self.epoch,
            train_loss: weighted / train.len() as f64,
            val_loss,
            steps: self.steps,
        };
        let secs = started.elapsed().as_secs_f64();
        log::info!(
            "epoch {}/{}: train loss {:.6}, val loss {}, {} steps, {:.1}s",
            record.epoch,
            self.model.config().epochs,
            record.train_loss,
            val_loss.map_or("-".to_string(), |v| format!("{v:.6}")),
            record.steps,
            secs
        );
        self.history.epochs.push(record.clone());
        self.history.wall_clock_s.push(secs);
        Ok(record)
    }

    /// Runs epochs until the configured count is reached.
    pub fn fit(&mut self, train: &[TrainingExample], val: &[TrainingExample]) -> Result<()> {
        while self.epoch < self.model.config().epochs {
            self.run_epoch(train, val)?;
        }
        Ok(())
    }
}

pub fn evaluate(model: &UNetModel<f32>, set: &[TrainingExample]) -> Result<f64> {
    if set.is_empty() {
        bail!(Data, "evaluation set is empty");
    }
    let mut weighted = 0.0;
    for chunk in set.chunks(model.config().batch_size) {
        let batch: Vec<&TrainingExample> = chunk.iter().collect();
        let (spatial, met, target) = batch_tensors(&batch)?;
        let pred = model.predict(&spatial, &met)?;
        weighted += crate::numerics::mse_loss(&pred, &target)? * chunk.len() as f64;
    }
    Ok(weighted / set.len() as f64)
}

/// Trains `model` with the training settings of `config`, whose
/// architecture fields must match the model's.
///
/// Takes `epochs * ceil(|train| / batch_size)` optimizer steps. On a
/// non-finite loss or gradient the error comes back together with the
/// state preceding the failing step.
pub fn train(
    model: UNetModel<f32>,
    train_set: &[TrainingExample],
    val_set: &[TrainingExample],
    config: &UNetConfig,
    rng: ChaCha8Rng,
) -> Result<(UNetModel<f32>, TrainHistory), TrainFailure> {
    let mut trainer = Trainer::new(model);
    trainer.rng = rng;
    let fail = |trainer: &Trainer, error| TrainFailure {
        error,
        last_good: Box::new(trainer.checkpoint(None)),
    };
    if let Err(e) = config.validate() {
        return Err(fail(&trainer, e));
    }
    let arch = |c: &UNetConfig| {
        (c.input_size, c.spatial_channels, c.met_vars, c.met_timesteps, c.depth, c.base_channels, c.kernel_size)
    };
    if arch(config) != arch(trainer.model.config()) {
        let e = Error::Config("training config describes a different architecture".into());
        return Err(fail(&trainer, e));
    }
    if trainer.optimizer.kind() != config.optimizer {
        trainer.optimizer = OptimizerState::from_kind(config.optimizer, &trainer.model);
    }
    trainer.model.config = config.clone();
    match trainer.fit(train_set, val_set) {
        Ok(()) => Ok((trainer.model, trainer.history)),
        Err(e) => Err(fail(&trainer, e)),
    }
}
