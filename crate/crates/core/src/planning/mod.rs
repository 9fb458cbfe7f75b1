//! High-level policy choosing the next primitive from observed states.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{load_store, save_store};
use crate::error::{dim_err, Error, Result};
use crate::layers::{Gat, GatConfig, GruCell, Linear, Mlp};
use crate::pipeline::{Planner, PlannerCadence};
use crate::tasks::{Dataset, PrimitiveId, TaskSpec};
use crate::tensor::{AdamConfig, AdamState, ParamStore, Tape, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlannerArch {
    pub state_width: usize,
    pub hidden: usize,
    pub primitives: usize,
    pub graph: bool,
    pub gat_width: usize,
    pub fc_layers: usize,
}

impl PlannerArch {
    pub fn new(state_width: usize, hidden: usize, primitives: usize) -> Self {
        Self {
            state_width,
            hidden,
            primitives,
            graph: true,
            gat_width: 4,
            fc_layers: 1,
        }
    }
}

/// Graph-RNN encoder without the skip connection, a deterministic latent,
/// one decoder GRU step and a softmax head over primitives.
#[derive(Clone, Debug)]
pub struct PlannerModel {
    arch: PlannerArch,
    pub store: ParamStore,
    gat: Option<Gat>,
    encoder: GruCell,
    fc: Mlp,
    decoder: GruCell,
    head: Linear,
}

impl PlannerModel {
    pub fn new<R: Rng + ?Sized>(arch: PlannerArch, rng: &mut R) -> Result<Self> {
        if arch.primitives == 0 || arch.hidden == 0 || arch.state_width == 0 || arch.fc_layers == 0 {
            return Err(Error::Config(format!("invalid planner shape {arch:?}")));
        }
        let mut store = ParamStore::new();
        let w = arch.state_width;
        let h = arch.hidden;
        let gat = arch.graph.then(|| {
            let config = GatConfig {
                width: arch.gat_width,
                ..GatConfig::default()
            };
            Gat::new(&mut store, "planner.gat", config, 0, rng)
        });
        let enc_in = gat.as_ref().map_or(w, |g| g.output_width(w));
        let encoder = GruCell::new(&mut store, "planner.encoder", enc_in, h, 0, rng);
        let fc = Mlp::new(&mut store, "planner.fc", &vec![h; arch.fc_layers + 1], 0, rng);
        let decoder = GruCell::new(&mut store, "planner.decoder", w, h, 0, rng);
        let head = Linear::new(&mut store, "planner.head", h, arch.primitives, 0, rng);
        Ok(Self {
            arch,
            store,
            gat,
            encoder,
            fc,
            decoder,
            head,
        })
    }

    pub fn arch(&self) -> &PlannerArch {
        &self.arch
    }

    pub fn gat(&self) -> Option<&Gat> {
        self.gat.as_ref()
    }

    /// Logits-free forward: `B×K` probabilities for a batch of equal-length
    /// prefixes, one `B×width` matrix per observed step.
    pub fn probabilities_vars(&self, tape: &mut Tape, steps: &[Var]) -> Result<Var> {
        let Some(&first) = steps.first() else {
            return Err(Error::Contract("planner needs at least one observed state".into()));
        };
        let w = self.arch.state_width;
        let batch = match tape.shape(first) {
            [b, c] if *c == w => *b,
            s => return dim_err(format!("planner expects B×{w} inputs, got {s:?}")),
        };
        let mut h = tape.zeros(&[batch, self.arch.hidden]);
        for &x in steps {
            let feats = match &self.gat {
                Some(g) => g.forward(tape, &self.store, x, w)?.features,
                None => x,
            };
            h = self.encoder.step(tape, &self.store, feats, h)?;
        }
        let latent = self.fc.forward(tape, &self.store, h)?;
        let latent = tape.tanh(latent);
        let zeros = tape.zeros(&[batch, w]);
        let d = self.decoder.step(tape, &self.store, zeros, latent)?;
        let logits = self.head.forward(tape, &self.store, d)?;
        tape.softmax(logits, 1)
    }

    pub fn probabilities(&self, observed: &[&[f64]]) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let mut steps = Vec::with_capacity(observed.len());
        for s in observed {
            if s.len() != self.arch.state_width {
                return dim_err(format!("state of width {}, planner expects {}", s.len(), self.arch.state_width));
            }
            steps.push(tape.constant_from(&[1, s.len()], s.to_vec())?);
        }
        let p = self.probabilities_vars(&mut tape, &steps)?;
        Ok(tape.value(p).to_vec())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_store(&self.store, path)
    }

    pub fn load(&mut self, path: &Path) -> Result<()> {
        load_store(&mut self.store, path)
    }
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

impl Planner for PlannerModel {
    fn plan_next(&self, observed: &[&[f64]]) -> Result<(PrimitiveId, Vec<f64>)> {
        let p = self.probabilities(observed)?;
        Ok((PrimitiveId::from_index(argmax(&p)), p))
    }
}

/// One supervised example: the observed prefix and the primitive to run next.
#[derive(Clone, Debug, PartialEq)]
pub struct PlannerExample {
    pub prefix: Vec<Vec<f64>>,
    pub next: PrimitiveId,
}

/// Examples at every primitive boundary of every demonstration.
pub fn planner_examples(task: &TaskSpec, dataset: &Dataset, cadence: PlannerCadence) -> Result<Vec<PlannerExample>> {
    let k = task.primitive_count();
    let boundaries = task.boundaries();
    let mut out = Vec::new();
    for (d, demo) in dataset.demos.iter().enumerate() {
        if let Some(bad) = demo.labels.iter().find(|l| l.index() >= k) {
            return Err(Error::Data(format!("demo {d}: label {bad} outside 1..={k}")));
        }
        for (j, &start) in boundaries.iter().enumerate() {
            let Some(&next) = demo.labels.get(start) else {
                return Err(Error::Data(format!("demo {d} ends before primitive {}", j + 1)));
            };
            let prefix = match cadence {
                PlannerCadence::Boundary => demo.boundary_states(task)[..=j].iter().map(|s| s.to_vec()).collect(),
                PlannerCadence::EveryStep => (0..=start).map(|t| demo.state_before(t).to_vec()).collect(),
            };
            out.push(PlannerExample { prefix, next });
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlannerTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for PlannerTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 32,
            learning_rate: 1e-3,
            seed: 0,
        }
    }
}

fn batch_loss(planner: &PlannerModel, tape: &mut Tape, batch: &[&PlannerExample]) -> Result<Var> {
    let w = planner.arch.state_width;
    let len = batch[0].prefix.len();
    let mut steps = Vec::with_capacity(len);
    for t in 0..len {
        let mut rows = Vec::with_capacity(batch.len() * w);
        for ex in batch {
            rows.extend_from_slice(&ex.prefix[t]);
        }
        steps.push(tape.constant_from(&[batch.len(), w], rows)?);
    }
    let p = planner.probabilities_vars(tape, &steps)?;
    let targets: Vec<usize> = batch.iter().map(|ex| ex.next.index()).collect();
    tape.cross_entropy(p, &targets)
}

/// Cross-entropy training with Adam. Batches group prefixes of equal
/// length. Returns the per-epoch mean loss.
pub fn train_planner(
    planner: &mut PlannerModel,
    examples: &[PlannerExample],
    config: &PlannerTrainConfig,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<Vec<f64>> {
    if examples.is_empty() {
        return Err(Error::Data("no planner training examples".into()));
    }
    if config.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    if let Some(bad) = examples.iter().find(|e| e.next.index() >= planner.arch.primitives) {
        return Err(Error::Data(format!("label {} outside 1..={}", bad.next, planner.arch.primitives)));
    }
    let mut groups: std::collections::BTreeMap<usize, Vec<&PlannerExample>> = Default::default();
    for ex in examples {
        if ex.prefix.is_empty() {
            return Err(Error::Data("planner example with an empty prefix".into()));
        }
        groups.entry(ex.prefix.len()).or_default().push(ex);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = AdamState::new(&planner.store, AdamConfig::default(), vec![config.learning_rate]);
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let mut batches = Vec::new();
        for group in groups.values() {
            let mut order = group.clone();
            order.shuffle(&mut rng);
            batches.extend(order.chunks(config.batch_size).map(<[_]>::to_vec));
        }
        batches.shuffle(&mut rng);
        let (mut total, mut count) = (0.0, 0usize);
        for batch in &batches {
            let mut tape = Tape::new();
            let loss = batch_loss(planner, &mut tape, batch)?;
            total += tape.scalar(loss) * batch.len() as f64;
            count += batch.len();
            tape.backward(loss, &mut planner.store)?;
            adam.step(&mut planner.store)?;
        }
        let mean = total / count as f64;
        on_epoch(epoch, mean);
        history.push(mean);
    }
    Ok(history)
}

/// Fraction of examples whose next primitive is predicted correctly.
pub fn planner_accuracy(planner: &PlannerModel, examples: &[PlannerExample]) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::Contract("accuracy over zero examples".into()));
    }
    let mut correct = 0;
    for ex in examples {
        let prefix: Vec<&[f64]> = ex.prefix.iter().map(Vec::as_slice).collect();
        if planner.plan_next(&prefix)?.0 == ex.next {
            correct += 1;
        }
    }
    Ok(correct as f64 / examples.len() as f64)
}

/// Mean cross-entropy of `examples` without training.
pub fn planner_loss(planner: &PlannerModel, examples: &[PlannerExample]) -> Result<f64> {
    let mut total = 0.0;
    for ex in examples {
        let mut tape = Tape::new();
        let loss = batch_loss(planner, &mut tape, &[ex])?;
        total += tape.scalar(loss);
    }
    Ok(total / examples.len().max(1) as f64)
}
