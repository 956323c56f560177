use std::sync::mpsc;
use std::thread;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{sce_loss, SceModel};
use crate::autograd::{Tape, Tensor};
use crate::corpus::{Batch, Corpus, MixType, Split};
use crate::error::{Error, Result};
use crate::nn::{clip_grad_norm, AdamState};

const PREFETCH: usize = 4;
const VALIDATION_STREAM: u64 = 0x5641_4c49_4441_5445;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Total step budget, counted from step 0 (resumed runs stop at the same
    /// step as uninterrupted ones).
    pub steps: u64,
    pub mix_type: MixType,
    /// Validate every this many steps; 0 disables validation.
    pub validate_every: u64,
    pub validation_batches: usize,
    /// Stop after this many validations without improvement; 0 disables.
    pub patience: usize,
    pub clip_norm: f64,
    /// Periodic checkpoint interval used by the command-line trainer.
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 20_000,
            mix_type: MixType::Random,
            validate_every: 100,
            validation_batches: 4,
            patience: 10,
            clip_norm: 5.0,
            checkpoint_every: 500,
        }
    }
}

/// Batch RNG for a given step. Depends only on `(seed, step)`, so a resumed
/// run sees the same batches as an uninterrupted one.
pub fn batch_rng(seed: u64, step: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step);
    rng
}

fn forward_loss(model: &SceModel, tape: &mut Tape, batch: &Batch) -> Result<crate::autograd::Var> {
    let x = tape.constant(batch.features_tensor());
    let v_i = model.encoder.embed(tape, x)?;
    let v_o = model
        .speakers
        .gather(tape, &batch.speaker_indices, batch.batch)?;
    sce_loss(tape, v_i, v_o, &batch.labels_tensor(), model.config.loss_norm)
}

/// Loss of `model` on `batch` without updating anything.
pub fn batch_loss(model: &SceModel, batch: &Batch) -> Result<f32> {
    let mut frozen = model.clone();
    for p in frozen.params_mut() {
        p.set_requires_grad(false);
    }
    let mut tape = Tape::new();
    let l = forward_loss(&frozen, &mut tape, batch)?;
    tape.value(l).item()
}

/// Forward, backward, clip and one Adam step. Returns the loss before the
/// update. A non-finite loss or gradient leaves the parameters untouched.
pub fn train_step(model: &mut SceModel, adam: &mut AdamState, batch: &Batch, clip_norm: f64) -> Result<f32> {
    if batch.bins != model.encoder.bins() {
        return Err(Error::shape(
            "train_step",
            &[batch.batch, batch.frames, batch.bins],
            &[model.config.batch, model.config.frames, model.encoder.bins()],
        ));
    }
    let mut tape = Tape::new();
    let l = forward_loss(model, &mut tape, batch)?;
    let loss = tape.value(l).item()?;
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("sce_loss ({loss})")));
    }
    tape.backward(l)?;
    let mut params = model.params_mut();
    for p in params.iter_mut() {
        p.zero_grad();
    }
    tape.write_grads(params.iter_mut().map(|p| &mut **p))?;
    drop(tape);
    let norm = clip_grad_norm(&mut params, clip_norm);
    if !norm.is_finite() {
        for p in params.iter_mut() {
            p.zero_grad();
        }
        return Err(Error::NonFinite(format!("gradient norm ({norm})")));
    }
    adam.update(&mut params)?;
    Ok(loss)
}

/// One line of the training log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    pub wall_ms: u64,
    pub train_loss: f32,
    pub val_loss: Option<f32>,
    /// Set when `val_loss` is the best seen so far in this run.
    pub improved: bool,
}

impl StepRecord {
    /// Tab-separated `step, wall_ms, train_loss[, val_loss]`.
    pub fn log_line(&self) -> String {
        match self.val_loss {
            Some(v) => format!("{}\t{}\t{:.6}\t{:.6}", self.step, self.wall_ms, self.train_loss, v),
            None => format!("{}\t{}\t{:.6}", self.step, self.wall_ms, self.train_loss),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainOutcome {
    pub last_step: u64,
    pub best_val_loss: Option<f32>,
    pub stopped_early: bool,
}

/// Fixed validation batches, identical at every evaluation.
pub fn validation_batches(corpus: &Corpus, model: &SceModel, config: &TrainConfig, seed: u64) -> Result<Vec<Batch>> {
    let mut rng = batch_rng(seed, VALIDATION_STREAM);
    (0..config.validation_batches)
        .map(|_| {
            corpus.sample_batch(
                Split::Validate,
                config.mix_type,
                model.config.batch,
                model.config.frames,
                &mut rng,
            )
        })
        .collect()
}

/// Runs steps `adam.step + 1 ..= config.steps`. A producer thread prepares
/// batches ahead of the optimizer through a bounded queue.
/// `on_step` sees every record together with the updated model.
pub fn train(
    model: &mut SceModel,
    adam: &mut AdamState,
    corpus: &Corpus,
    config: &TrainConfig,
    seed: u64,
    mut on_step: impl FnMut(&StepRecord, &SceModel, &AdamState) -> Result<()>,
) -> Result<TrainOutcome> {
    let start = adam.step;
    let mut outcome = TrainOutcome {
        last_step: start,
        best_val_loss: None,
        stopped_early: false,
    };
    if start >= config.steps {
        return Ok(outcome);
    }
    let val = if config.validate_every > 0 && config.validation_batches > 0 {
        validation_batches(corpus, model, config, seed)?
    } else {
        Vec::new()
    };
    let (batch_size, frames) = (model.config.batch, model.config.frames);
    let clock = Instant::now();
    let mut stale = 0usize;
    thread::scope(|scope| {
        let (tx, rx) = mpsc::sync_channel::<Result<Batch>>(PREFETCH);
        scope.spawn(move || {
            for step in start + 1..=config.steps {
                let mut rng = batch_rng(seed, step);
                let b = corpus.sample_batch(Split::Train, config.mix_type, batch_size, frames, &mut rng);
                if tx.send(b).is_err() {
                    break;
                }
            }
        });
        for step in start + 1..=config.steps {
            let batch = rx
                .recv()
                .map_err(|_| Error::invalid("batch producer stopped early"))??;
            let train_loss = train_step(model, adam, &batch, config.clip_norm)?;
            let mut record = StepRecord {
                step,
                wall_ms: clock.elapsed().as_millis() as u64,
                train_loss,
                val_loss: None,
                improved: false,
            };
            if !val.is_empty() && step % config.validate_every == 0 {
                let mut total = 0.0f64;
                for b in &val {
                    total += batch_loss(model, b)? as f64;
                }
                let v = (total / val.len() as f64) as f32;
                record.val_loss = Some(v);
                if outcome.best_val_loss.is_none_or(|best| v < best) {
                    outcome.best_val_loss = Some(v);
                    record.improved = true;
                    stale = 0;
                } else {
                    stale += 1;
                }
            }
            on_step(&record, model, adam)?;
            outcome.last_step = step;
            if config.patience > 0 && stale >= config.patience {
                outcome.stopped_early = true;
                break;
            }
        }
        drop(rx);
        Ok(outcome)
    })
}

/// Gradient of the loss with respect to every parameter, in
/// [`SceModel::named_params`] order. Leaves the model's grad buffers alone.
pub fn loss_gradients(model: &SceModel, batch: &Batch) -> Result<(f32, Vec<Vec<f32>>)> {
    let mut tape = Tape::new();
    let l = forward_loss(model, &mut tape, batch)?;
    tape.backward(l)?;
    let grads = model
        .named_params()
        .iter()
        .map(|(_, t)| {
            tape.grad_of(t)
                .map(|g| g.to_vec())
                .unwrap_or_else(|| vec![0.0; t.len()])
        })
        .collect();
    Ok((tape.value(l).item()?, grads))
}

/// Input tensor and labels bundled for callers that build batches by hand.
pub fn batch_from_tensors(features: &Tensor, labels: &Tensor, speaker_indices: Vec<usize>) -> Result<Batch> {
    let fs = features.shape();
    let ls = labels.shape();
    if fs.len() != 3 || ls.len() != 4 || ls[..3] != fs[..] || speaker_indices.len() != fs[0] * ls[3] {
        return Err(Error::shape("batch_from_tensors", fs, ls));
    }
    Ok(Batch {
        batch: fs[0],
        frames: fs[1],
        bins: fs[2],
        speakers: ls[3],
        features: features.data().to_vec(),
        labels: labels.data().to_vec(),
        speaker_indices,
        source_magnitudes: Vec::new(),
    })
}
