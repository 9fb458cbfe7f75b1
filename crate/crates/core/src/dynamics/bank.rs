use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::Rng;

use super::model::{sample_latent, DynamicsArch, DynamicsModel, LatentMode};
use crate::checkpoint::{read_records, write_records};
use crate::error::{Error, Result};
use crate::kinematics::Pose;
use crate::tasks::PrimitiveId;
use crate::tensor::Tensor;

/// Dynamics models indexed by primitive id. With `multi` off a single
/// shared model serves every primitive.
#[derive(Debug)]
pub struct ModelBank {
    multi: bool,
    horizons: Vec<usize>,
    models: Vec<DynamicsModel>,
    calls: Vec<AtomicUsize>,
}

impl Clone for ModelBank {
    fn clone(&self) -> Self {
        Self {
            multi: self.multi,
            horizons: self.horizons.clone(),
            models: self.models.clone(),
            calls: self.calls.iter().map(|c| AtomicUsize::new(c.load(Ordering::Relaxed))).collect(),
        }
    }
}

impl ModelBank {
    /// One model per entry of `horizons` when `multi`, otherwise one shared
    /// model. Models are initialized in order from `rng`.
    pub fn new<R: Rng + ?Sized>(arch: DynamicsArch, horizons: Vec<usize>, multi: bool, rng: &mut R) -> Result<Self> {
        if horizons.is_empty() {
            return Err(Error::Config("model bank over zero primitives".into()));
        }
        let count = if multi { horizons.len() } else { 1 };
        let models = (0..count)
            .map(|_| DynamicsModel::new(arch.clone(), rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            multi,
            horizons,
            calls: (0..count).map(|_| AtomicUsize::new(0)).collect(),
            models,
        })
    }

    pub fn multi(&self) -> bool {
        self.multi
    }

    pub fn primitive_count(&self) -> usize {
        self.horizons.len()
    }

    pub fn horizon(&self, id: PrimitiveId) -> Result<usize> {
        self.horizons.get(id.index()).copied().ok_or(Error::UnknownPrimitive(id.get()))
    }

    pub fn models(&self) -> &[DynamicsModel] {
        &self.models
    }

    pub fn models_mut(&mut self) -> &mut [DynamicsModel] {
        &mut self.models
    }

    /// Index of the model serving `id`.
    pub fn route(&self, id: PrimitiveId) -> Result<usize> {
        self.horizon(id)?;
        Ok(if self.multi { id.index() } else { 0 })
    }

    pub fn model(&self, id: PrimitiveId) -> Result<&DynamicsModel> {
        Ok(&self.models[self.route(id)?])
    }

    /// How often each model has served a rollout.
    pub fn call_counts(&self) -> Vec<usize> {
        self.calls.iter().map(|c| c.load(Ordering::Relaxed)).collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.models.iter().map(DynamicsModel::parameter_count).sum()
    }

    /// Predicts the states of primitive `id` from `initial`: constant-input
    /// encoding, latent draw, decoding, then quaternion renormalization.
    pub fn rollout_primitive<R: Rng + ?Sized>(
        &self,
        id: PrimitiveId,
        initial: &[f64],
        rng: &mut R,
        mode: LatentMode,
    ) -> Result<Vec<Vec<f64>>> {
        let k = self.route(id)?;
        let m = self.horizons[id.index()];
        let model = &self.models[k];
        self.calls[k].fetch_add(1, Ordering::Relaxed);
        let dist = model.encode_initial(initial, m)?;
        let z = sample_latent(&dist, rng, mode);
        let mut states = model.decode(&z, m)?;
        for s in &mut states {
            renormalize_quaternions(s)?;
        }
        Ok(states)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn write<W: Write>(&self, out: &mut W) -> Result<()> {
        let names: Vec<(String, &Tensor)> = self
            .models
            .iter()
            .enumerate()
            .flat_map(|(k, m)| m.store.named().map(move |(n, t)| (format!("model{k}/{n}"), t)))
            .collect();
        write_records(out, names.iter().map(|(n, t)| (n.as_str(), *t)))
    }

    /// Loads weights into a bank built with the same architecture.
    pub fn load(&mut self, path: &Path) -> Result<()> {
        let records = read_records(&mut BufReader::new(File::open(path)?))?;
        let expected: usize = self.models.iter().map(|m| m.store.len()).sum();
        if records.len() != expected {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} records, bank has {expected} parameters",
                records.len()
            )));
        }
        for (name, t) in &records {
            let (prefix, rest) = name
                .split_once('/')
                .ok_or_else(|| Error::Checkpoint(format!("record {name} has no model prefix")))?;
            let k: usize = prefix
                .strip_prefix("model")
                .and_then(|s| s.parse().ok())
                .filter(|&k| k < self.models.len())
                .ok_or_else(|| Error::Checkpoint(format!("record {name} names no model of this bank")))?;
            self.models[k].store.assign(rest, t)?;
        }
        Ok(())
    }
}

/// Normalizes every quaternion block of a state in place.
pub fn renormalize_quaternions(state: &mut [f64]) -> Result<()> {
    for block in state.chunks_mut(7) {
        let pose = Pose::from_block(block)?;
        block.copy_from_slice(&pose.to_block());
    }
    Ok(())
}
