use std::collections::VecDeque;

use log::{debug, info};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::network::{backward, forward, Batch, DropoutMasks};
use super::{ModelParams, TrainingConfig};
use crate::error::{Error, Result};
use crate::neuralnet::{masked_loss, AdamState, LossKind, ParamSet};
use crate::preprocess::{make_batches, NormalizedSeries};

/// Windows into a normalized series, identified by forecast origin index.
#[derive(Debug, Clone, Copy)]
pub struct WindowSet<'a> {
    pub series: &'a NormalizedSeries,
    pub origins: &'a [usize],
}

impl<'a> WindowSet<'a> {
    pub fn new(series: &'a NormalizedSeries, origins: &'a [usize]) -> Self {
        Self { series, origins }
    }

    pub fn len(&self) -> usize {
        self.origins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origins.is_empty()
    }

    /// Whether any target in any window is reliable.
    pub fn has_reliable_target(&self, horizon: usize) -> bool {
        self.origins
            .iter()
            .any(|&o| (o + 1..(o + 1 + horizon).min(self.series.len())).any(|i| self.series.status[i].is_reliable()))
    }
}

/// Endless stream of shuffled batches; each pass over the data is reshuffled
/// with a seed derived from the base seed and the pass number. A pass ends
/// with its short remainder batch.
#[derive(Debug, Clone)]
pub struct BatchCycler {
    n: usize,
    batch_size: usize,
    seed: u64,
    pass: u64,
    pending: VecDeque<Vec<usize>>,
}

impl BatchCycler {
    pub fn new(n: usize, batch_size: usize, seed: u64) -> Self {
        assert!(n > 0, "cannot cycle over zero samples");
        Self {
            n,
            batch_size,
            seed,
            pass: 0,
            pending: VecDeque::new(),
        }
    }

    pub fn next_batch(&mut self) -> Vec<usize> {
        if self.pending.is_empty() {
            let seed = self.seed ^ self.pass.wrapping_mul(0x9E37_79B9_7F4A_7C15);
            self.pending = make_batches(self.n, self.batch_size, Some(seed)).into();
            self.pass += 1;
        }
        self.pending.pop_front().expect("refilled above")
    }
}

/// One optimizer step on `batch`. Returns the batch loss, or `None` when
/// every target was masked and the step was skipped.
pub fn train_step(
    model: &mut ModelParams,
    adam: &mut AdamState,
    batch: &Batch,
    loss: LossKind,
    clip_norm: Option<f64>,
    rng: &mut ChaCha8Rng,
) -> Result<Option<f64>> {
    let masks = DropoutMasks::sample(&model.arch, batch.len(), rng);
    let (out, cache) = forward(
        &model.net,
        &model.arch,
        batch.x_power.view(),
        batch.x_feat.view(),
        Some(&masks),
        true,
    )?;
    let Some(l) = masked_loss(loss, out.view(), batch.y.view(), batch.mask.view()) else {
        return Ok(None);
    };
    if !l.value.is_finite() {
        return Err(Error::Numerical(format!("training loss is {}", l.value)));
    }
    let mut grads = backward(&model.net, &model.arch, &cache.expect("cache requested"), l.grad.view());
    if let Some(max_norm) = clip_norm {
        let norm = grads.global_norm();
        if norm > max_norm {
            grads.scale(max_norm / norm);
        }
    }
    adam.step(&mut model.net, &grads);
    Ok(Some(l.value))
}

/// Inference-mode masked loss over all windows, pooled over every unmasked
/// target. `None` when nothing is unmasked.
pub fn masked_loss_over(model: &ModelParams, windows: &WindowSet<'_>, loss: LossKind) -> Result<Option<f64>> {
    let mut total = 0.0;
    let mut count = 0usize;
    for chunk in windows.origins.chunks(256) {
        let batch = Batch::gather(windows.series, chunk, model.arch.lookback, model.arch.output_dim);
        let (out, _) = forward(
            &model.net,
            &model.arch,
            batch.x_power.view(),
            batch.x_feat.view(),
            None,
            false,
        )?;
        if let Some(l) = masked_loss(loss, out.view(), batch.y.view(), batch.mask.view()) {
            total += l.value * l.count as f64;
            count += l.count;
        }
    }
    Ok((count > 0).then(|| total / count as f64))
}

/// Early-stopping bookkeeping on a monitored loss (lower is better).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    wait: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EpochVerdict {
    Improved,
    Continue,
    Stop,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            wait: 0,
        }
    }

    /// Records the loss of 1-based `epoch`. `Stop` is returned once
    /// `patience` consecutive epochs have failed to beat the best loss.
    pub fn observe(&mut self, epoch: usize, loss: f64) -> EpochVerdict {
        if loss < self.best {
            self.best = loss;
            self.best_epoch = epoch;
            self.wait = 0;
            return EpochVerdict::Improved;
        }
        self.wait += 1;
        if self.wait >= self.patience {
            EpochVerdict::Stop
        } else {
            EpochVerdict::Continue
        }
    }

    pub fn best(&self) -> (usize, f64) {
        (self.best_epoch, self.best)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub history: Vec<EpochRecord>,
    /// 1-based epoch whose weights were kept.
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
}

/// Trains from the model's current weights. After every epoch of
/// `steps_per_epoch` Adam steps the validation loss is measured; training
/// stops once `early_stopping_patience` consecutive epochs fail to improve on
/// the best one, and the best epoch's weights are restored.
pub fn train_initial(
    model: &mut ModelParams,
    train: &WindowSet<'_>,
    val: &WindowSet<'_>,
    config: &TrainingConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Data("training and validation windows must be nonempty".into()));
    }
    let horizon = model.arch.output_dim;
    if !train.has_reliable_target(horizon) {
        return Err(Error::Data("every training target is flagged unreliable".into()));
    }
    let val_origins: Vec<usize> = val.origins.iter().copied().step_by(config.val_stride).collect();
    let val_windows = WindowSet::new(val.series, &val_origins);

    let mut adam = AdamState::new(&model.net, config.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut cycler = BatchCycler::new(train.len(), config.batch_size, config.seed);

    let mut history = Vec::with_capacity(config.epochs);
    let mut stopping = EarlyStopping::new(config.early_stopping_patience);
    let mut best_net = model.net.clone();
    let mut stopped_early = false;

    for epoch in 1..=config.epochs {
        let mut sum = 0.0;
        let mut steps = 0;
        for _ in 0..config.steps_per_epoch {
            let idx = cycler.next_batch();
            let origins: Vec<usize> = idx.iter().map(|&i| train.origins[i]).collect();
            let batch = Batch::gather(train.series, &origins, model.arch.lookback, horizon);
            if let Some(l) = train_step(model, &mut adam, &batch, config.loss, config.clip_norm, &mut rng)? {
                sum += l;
                steps += 1;
            }
        }
        let train_loss = if steps > 0 { sum / steps as f64 } else { f64::NAN };
        let val_loss = masked_loss_over(model, &val_windows, config.loss)?
            .ok_or_else(|| Error::Data("every validation target is flagged unreliable".into()))?;
        if !val_loss.is_finite() {
            return Err(Error::Numerical(format!("validation loss is {val_loss}")));
        }
        debug!("epoch {epoch}: train {train_loss:.5} val {val_loss:.5}");
        history.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
        });

        match stopping.observe(epoch, val_loss) {
            EpochVerdict::Improved => best_net.clone_from(&model.net),
            EpochVerdict::Continue => {}
            EpochVerdict::Stop => {
                stopped_early = epoch < config.epochs;
                break;
            }
        }
    }

    let (best_epoch, best_val_loss) = stopping.best();
    model.net = best_net;
    info!(
        "training finished after {} epochs, best epoch {best_epoch} (val {best_val_loss:.5})",
        history.len()
    );
    Ok(TrainOutcome {
        history,
        best_epoch,
        best_val_loss,
        stopped_early,
    })
}
