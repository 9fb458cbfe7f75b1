use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::bank::ModelBank;
use super::model::{DynamicsModel, LatentMode, DECODER_GROUP, ENCODER_GROUP};
use crate::error::{Error, Result};
use crate::tasks::{Dataset, PrimitiveId, Segment, TaskSpec};
use crate::tensor::{AdamConfig, AdamState, Tape};

/// What the encoder GRU reads while training.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EncoderFeeding {
    /// Ground-truth states `s0 … s_{M−1}`.
    Teacher,
    /// The initial state at every step, as at test time.
    Initial,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DynamicsTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub encoder_lr: f64,
    pub decoder_lr: f64,
    /// Weight of the KL term; 0 trains on MSE alone.
    pub beta: f64,
    pub feeding: EncoderFeeding,
    pub latent: LatentMode,
    pub seed: u64,
    /// Fit each model's state standardization to its training segments
    /// before the first epoch.
    pub normalize: bool,
}

impl Default for DynamicsTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 500,
            batch_size: 32,
            encoder_lr: 1e-3,
            decoder_lr: 1e-3,
            beta: 0.0,
            feeding: EncoderFeeding::Teacher,
            latent: LatentMode::Sample,
            seed: 0,
            normalize: true,
        }
    }
}

/// Loss of one batch of equal-horizon segments on a tape, measured in the
/// model's standardized state space.
pub fn segment_batch_loss(
    model: &DynamicsModel,
    tape: &mut Tape,
    batch: &[&Segment],
    feeding: EncoderFeeding,
    latent: LatentMode,
    beta: f64,
    rng: &mut ChaCha8Rng,
) -> Result<crate::tensor::Var> {
    let b = batch.len();
    let m = batch[0].targets.len();
    let w = model.arch().state_width;
    if batch.iter().any(|s| s.targets.len() != m) {
        return Err(Error::Contract("batch mixes segment horizons".into()));
    }
    let mut inputs = Vec::with_capacity(m);
    for t in 0..m {
        let mut rows = Vec::with_capacity(b * w);
        for s in batch {
            let row = match feeding {
                EncoderFeeding::Teacher if t > 0 => &s.targets[t - 1],
                _ => &s.initial,
            };
            rows.extend(model.normalize(row));
        }
        inputs.push(tape.constant_from(&[b, w], rows)?);
    }
    let enc = model.encode_vars(tape, &inputs)?;
    let z = model.sample_vars(tape, enc, latent, rng)?;
    let outs = model.decode_vars(tape, z, m)?;
    let pred = tape.concat(&outs, 0)?;
    let mut target = Vec::with_capacity(m * b * w);
    for t in 0..m {
        for s in batch {
            target.extend(model.normalize(&s.targets[t]));
        }
    }
    let target = tape.constant_from(&[m * b, w], target)?;
    let mse = tape.mse(pred, target)?;
    if beta > 0.0 {
        let kl = model.kl_vars(tape, enc)?;
        let kl = tape.scale(kl, beta);
        tape.add(mse, kl)
    } else {
        Ok(mse)
    }
}

/// Collects each primitive's segments, failing on a primitive without data.
pub fn segments_by_primitive(task: &TaskSpec, dataset: &Dataset) -> Result<Vec<Vec<Segment>>> {
    (0..task.primitive_count())
        .map(|i| {
            let id = PrimitiveId::from_index(i);
            let segs = dataset.segments(task, id)?;
            if segs.is_empty() {
                return Err(Error::Data(format!(
                    "no training segments for primitive {id} ({})",
                    task.primitives[i].name
                )));
            }
            Ok(segs)
        })
        .collect()
}

/// Trains every model of the bank on its primitives' segments. Batches
/// never mix primitives; their order is shuffled each epoch. Returns the
/// per-epoch mean loss and calls `on_epoch(epoch, loss)` as it goes.
pub fn train_dynamics(
    bank: &mut ModelBank,
    segments: &[Vec<Segment>],
    config: &DynamicsTrainConfig,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<Vec<f64>> {
    if segments.len() != bank.primitive_count() {
        return Err(Error::Data(format!(
            "{} primitive segment sets for a bank of {} primitives",
            segments.len(),
            bank.primitive_count()
        )));
    }
    if let Some(i) = segments.iter().position(Vec::is_empty) {
        return Err(Error::Data(format!("no training segments for primitive {}", i + 1)));
    }
    if config.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let routes: Vec<usize> = (0..segments.len())
        .map(|i| bank.route(PrimitiveId::from_index(i)))
        .collect::<Result<_>>()?;
    if config.normalize {
        for k in 0..bank.models().len() {
            let states = segments
                .iter()
                .zip(&routes)
                .filter(|(_, &r)| r == k)
                .flat_map(|(segs, _)| segs)
                .flat_map(|s| std::iter::once(&s.initial).chain(&s.targets))
                .map(Vec::as_slice);
            bank.models_mut()[k].fit_normalizer(states)?;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let lrs = {
        let mut v = vec![0.0; 2];
        v[ENCODER_GROUP] = config.encoder_lr;
        v[DECODER_GROUP] = config.decoder_lr;
        v
    };
    let mut optimizers: Vec<AdamState> = bank
        .models()
        .iter()
        .map(|m| AdamState::new(&m.store, AdamConfig::default(), lrs.clone()))
        .collect();

    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let mut batches: Vec<(usize, Vec<&Segment>)> = Vec::new();
        for (i, segs) in segments.iter().enumerate() {
            let mut order: Vec<&Segment> = segs.iter().collect();
            order.shuffle(&mut rng);
            for chunk in order.chunks(config.batch_size) {
                batches.push((i, chunk.to_vec()));
            }
        }
        batches.shuffle(&mut rng);
        let mut total = 0.0;
        let mut count = 0usize;
        for (i, batch) in &batches {
            let k = routes[*i];
            let model = &mut bank.models_mut()[k];
            let mut tape = Tape::new();
            let loss = segment_batch_loss(model, &mut tape, batch, config.feeding, config.latent, config.beta, &mut rng)?;
            let value = tape.scalar(loss);
            if !value.is_finite() {
                return Err(Error::Data(format!("non-finite loss in epoch {epoch}")));
            }
            tape.backward(loss, &mut model.store)?;
            optimizers[k].step(&mut model.store)?;
            total += value * batch.len() as f64;
            count += batch.len();
        }
        let mean = total / count as f64;
        on_epoch(epoch, mean);
        history.push(mean);
    }
    Ok(history)
}
