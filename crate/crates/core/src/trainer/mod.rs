//! Adam training loop with early stopping on validation F1.

mod checkpoint;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Phase, Tape};
use crate::error::{Error, Result};
use crate::evaluation::{stack_inputs, validation_f1};
use crate::losses::{ensemble_loss, LossWeights};
use crate::model::{Model, Param, Variant};
use crate::rng::{derived, stream};
use crate::signal::Segment;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

/// Model selection criterion recorded in checkpoints.
pub const SELECTION: &str = "aggregated_validation_f1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Zero freezes the parameters.
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a strict F1 improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    /// Exit weights apply to the early-exit variant only.
    pub loss: LossWeights,
    pub variant: Variant,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 50,
            max_epochs: 200,
            patience: 10,
            seed: 0,
            loss: LossWeights::uniform(5),
            variant: Variant::EarlyExit,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be finite and non-negative", self.learning_rate)));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return Err(Error::Config("batch size, epoch limit and patience must be at least 1".into()));
        }
        Ok(())
    }

    /// Loss weights for a model with `exits` outputs.
    pub fn loss_for(&self, exits: usize) -> LossWeights {
        if exits == 1 {
            LossWeights { alpha: vec![1.0], ..self.loss.clone() }
        } else {
            self.loss.clone()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &[Param]) -> Self {
        let zeros = || params.iter().map(|p| vec![0.0; p.value.len()]).collect();
        Self { m: zeros(), v: zeros(), t: 0, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(params: &mut [Param], grads: &[Vec<f32>], state: &mut AdamState, lr: f64) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(Error::shape(
            "adam_step",
            format!("{} params, {} grads, {} moment buffers", params.len(), grads.len(), state.m.len()),
        ));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if g.len() != p.value.len() || state.m[i].len() != g.len() || state.v[i].len() != g.len() {
            return Err(Error::shape("adam_step", format!("{}: gradient length {} vs {}", p.name, g.len(), p.value.len())));
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let (b1, b2) = (state.beta1 as f32, state.beta2 as f32);
    let bc1 = (1.0 - state.beta1.powi(t)) as f32;
    let bc2 = (1.0 - state.beta2.powi(t)) as f32;
    let (lr, eps) = (lr as f32, state.eps as f32);
    for (i, p) in params.iter_mut().enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (((w, &g), m), v) in p.value.data_mut().iter_mut().zip(&grads[i]).zip(m.iter_mut()).zip(v.iter_mut()) {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *w -= lr * (*m / bc1) / ((*v / bc2).sqrt() + eps);
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean weighted training loss over segments.
    pub train_loss: f64,
    /// Mean unweighted loss of every exit.
    pub exit_losses: Vec<f64>,
    pub val_f1: f64,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: Model,
    pub adam: Option<AdamState>,
    pub history: Vec<EpochRecord>,
    pub train_config: Option<TrainConfig>,
    /// Epoch whose parameters are stored; 0 when untrained.
    pub best_epoch: usize,
    pub selection: String,
}

impl Checkpoint {
    pub fn untrained(model: Model) -> Self {
        Self { model, adam: None, history: Vec::new(), train_config: None, best_epoch: 0, selection: SELECTION.into() }
    }
}

pub fn train(model: Model, train_set: &[Segment], val_set: &[Segment], cfg: &TrainConfig) -> Result<Checkpoint> {
    train_with(model, train_set, val_set, cfg, |_| {})
}

/// Trains and returns the best epoch by validation F1. `on_epoch` sees every
/// epoch record as it completes.
pub fn train_with(
    mut model: Model,
    train_set: &[Segment],
    val_set: &[Segment],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<Checkpoint> {
    cfg.validate()?;
    if model.variant() != cfg.variant {
        return Err(Error::Variant { expected: cfg.variant.to_string(), actual: model.variant().to_string() });
    }
    if train_set.is_empty() {
        return Err(Error::EmptyData("training set".into()));
    }
    if val_set.is_empty() {
        return Err(Error::EmptyData("validation set".into()));
    }
    let exits = model.config().num_exits();
    let weights = cfg.loss_for(exits);
    weights.validate(exits)?;

    let mut adam = AdamState::new(model.params());
    let mut history = Vec::new();
    let mut best: Option<(f64, usize, Model, AdamState)> = None;
    let mut stale = 0;
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=cfg.max_epochs {
        order.sort_unstable();
        order.shuffle(&mut derived(cfg.seed, &[stream::SHUFFLE, epoch as u64]));
        let mut loss_sum = 0.0;
        let mut exit_sums = vec![0.0; exits];
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<Segment> = idx.iter().map(|&i| train_set[i].clone()).collect();
            let x = stack_inputs(&batch)?;
            let labels: Vec<u8> = batch.iter().flat_map(|s| s.y.iter().copied()).collect();
            let mut rng = derived(cfg.seed, &[stream::DROPOUT, epoch as u64, b as u64]);

            let mut tape = Tape::new();
            let xv = tape.leaf(x, false);
            let out = model.forward_tape(&mut tape, xv, Phase::Train, true, &mut rng, None)?;
            let loss = ensemble_loss(&mut tape, &out.exits, &labels, &weights)?;
            let value = tape.value(loss.total).data()[0] as f64;
            if !value.is_finite() {
                return Err(Error::Diverged { epoch, batch: b, loss: value });
            }
            let n = batch.len() as f64;
            loss_sum += value * n;
            for (acc, v) in exit_sums.iter_mut().zip(&loss.per_exit) {
                *acc += tape.value(*v).data()[0] as f64 * n;
            }
            let mut grads = tape.backward(loss.total)?;
            let g: Vec<Vec<f32>> = out
                .params
                .iter()
                .zip(model.params())
                .map(|(&v, p)| grads.take(v).unwrap_or_else(|| vec![0.0; p.value.len()]))
                .collect();
            adam_step(model.params_mut(), &g, &mut adam, cfg.learning_rate)?;
            model.commit_batch_stats(&out.batch_stats);
        }

        let total = train_set.len() as f64;
        let val_f1 = validation_f1(&model, val_set)?;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / total,
            exit_losses: exit_sums.iter().map(|s| s / total).collect(),
            val_f1,
        };
        log::info!("epoch {epoch}: loss {:.4} val f1 {:.4}", record.train_loss, val_f1);
        on_epoch(&record);
        history.push(record);

        if best.as_ref().is_none_or(|(f, ..)| val_f1 > *f) {
            best = Some((val_f1, epoch, model.clone(), adam.clone()));
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }

    let (_, best_epoch, model, adam) = best.expect("at least one epoch");
    Ok(Checkpoint {
        model,
        adam: Some(adam),
        history,
        train_config: Some(cfg.clone()),
        best_epoch,
        selection: SELECTION.into(),
    })
}
