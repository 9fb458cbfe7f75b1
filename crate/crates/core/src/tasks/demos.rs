use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::script::script_primitive;
use super::spec::{PrimitiveId, TaskKind, TaskSpec};
use crate::error::{Error, Result};

/// One scripted execution: the initial state, one state after each
/// step, and the primitive active during that step.
#[derive(Clone, Debug, PartialEq)]
pub struct Demonstration {
    pub initial: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub labels: Vec<PrimitiveId>,
    /// Object centers (x, y) at spawn.
    pub spawn: Vec<[f64; 2]>,
    pub success: bool,
}

/// The slice of a demonstration covered by one primitive.
#[derive(Clone, Debug, PartialEq)]
pub struct Segment {
    pub primitive: PrimitiveId,
    /// State at the primitive boundary.
    pub initial: Vec<f64>,
    /// The `M` states the primitive produces.
    pub targets: Vec<Vec<f64>>,
}

impl Segment {
    /// Ground-truth encoder inputs: the initial state then all targets
    /// but the last.
    pub fn teacher_inputs(&self) -> Vec<&[f64]> {
        std::iter::once(self.initial.as_slice())
            .chain(self.targets.iter().take(self.targets.len().saturating_sub(1)).map(Vec::as_slice))
            .collect()
    }
}

impl Demonstration {
    /// State before step `t` (0-based), so `t = 0` is the initial state.
    pub fn state_before(&self, t: usize) -> &[f64] {
        if t == 0 {
            &self.initial
        } else {
            &self.states[t - 1]
        }
    }

    pub fn segment(&self, task: &TaskSpec, id: PrimitiveId) -> Result<Segment> {
        let start = *task
            .boundaries()
            .get(id.index())
            .ok_or(Error::UnknownPrimitive(id.get()))?;
        let m = task.horizon(id)?;
        if start + m > self.states.len() {
            return Err(Error::Data(format!(
                "demonstration of {} states has no primitive {id}",
                self.states.len()
            )));
        }
        Ok(Segment {
            primitive: id,
            initial: self.state_before(start).to_vec(),
            targets: self.states[start..start + m].to_vec(),
        })
    }

    /// The initial state and the last state of every primitive.
    pub fn boundary_states(&self, task: &TaskSpec) -> Vec<&[f64]> {
        let mut out = vec![self.initial.as_slice()];
        let mut t = 0;
        for p in &task.primitives {
            t += p.horizon;
            if t <= self.states.len() {
                out.push(&self.states[t - 1]);
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub task: TaskKind,
    pub demos: Vec<Demonstration>,
    /// Object positions are relative to the gripper midpoint.
    pub relational: bool,
}

impl Dataset {
    pub fn segments(&self, task: &TaskSpec, id: PrimitiveId) -> Result<Vec<Segment>> {
        self.demos.iter().map(|d| d.segment(task, id)).collect()
    }

    pub fn len(&self) -> usize {
        self.demos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.demos.is_empty()
    }

    /// First `n` demos and the rest.
    pub fn split(&self, n: usize) -> (Dataset, Dataset) {
        let n = n.min(self.demos.len());
        let part = |demos: &[Demonstration]| Dataset {
            task: self.task,
            demos: demos.to_vec(),
            relational: self.relational,
        };
        (part(&self.demos[..n]), part(&self.demos[n..]))
    }
}

/// Independent stream for demonstration `index` under `master`.
pub fn demo_rng(master: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(index);
    rng
}

pub fn sample_spawn<R: Rng + ?Sized>(task: &TaskSpec, rng: &mut R) -> Vec<[f64; 2]> {
    task.spawn
        .iter()
        .map(|r| [rng.random_range(r.x[0]..=r.x[1]), rng.random_range(r.y[0]..=r.y[1])])
        .collect()
}

/// Executes every scripted primitive through the IK world from `spawn`.
pub fn run_demo(task: &TaskSpec, spawn: &[[f64; 2]]) -> Result<Demonstration> {
    let mut world = task.initial_world(spawn)?;
    let initial = world.state_vector();
    let mut states = Vec::with_capacity(task.total_steps());
    let mut labels = Vec::with_capacity(task.total_steps());
    for i in 0..task.primitive_count() {
        let id = PrimitiveId::from_index(i);
        let script = script_primitive(task, id, &world)?;
        let last = script.waypoints.len() - 1;
        for (k, targets) in script.waypoints.iter().enumerate() {
            let directives = if k == last { &script.directives[..] } else { &[] };
            world = world.step_world(targets, directives)?.0;
            states.push(world.state_vector());
            labels.push(id);
        }
    }
    Ok(Demonstration {
        success: task.world_success(&world),
        initial,
        states,
        labels,
        spawn: spawn.to_vec(),
    })
}

const MAX_RETRIES: usize = 10;

/// `n` successful demonstrations from uniform spawns. A slot whose
/// execution fails or misses the goal is redrawn up to 10 times.
pub fn generate_dataset(task: &TaskSpec, n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::Contract("dataset of zero demonstrations".into()));
    }
    let mut demos = Vec::with_capacity(n);
    for index in 0..n {
        let mut rng = demo_rng(seed, index as u64);
        let mut last_err = String::new();
        let mut found = None;
        for _ in 0..=MAX_RETRIES {
            let spawn = sample_spawn(task, &mut rng);
            match run_demo(task, &spawn) {
                Ok(d) if d.success => {
                    found = Some(d);
                    break;
                }
                Ok(_) => last_err = "goal predicate not met".into(),
                Err(e) => last_err = e.to_string(),
            }
        }
        demos.push(found.ok_or_else(|| {
            Error::Generation(format!("slot {index} failed {} times: {last_err}", MAX_RETRIES + 1))
        })?);
    }
    Ok(Dataset {
        task: task.kind,
        demos,
        relational: false,
    })
}
