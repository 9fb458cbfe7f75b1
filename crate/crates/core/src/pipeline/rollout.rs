use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{renormalize_quaternions, LatentMode, ModelBank};
use crate::error::{Error, Result};
use crate::kinematics::{Pose, WorldState};
use crate::tasks::{from_relational, primitive_directives, script_primitive, to_relational, PrimitiveId, TaskSpec};

/// Chooses the next primitive from the states observed so far.
pub trait Planner {
    /// Returns the chosen id and the probability of every primitive.
    fn plan_next(&self, observed: &[&[f64]]) -> Result<(PrimitiveId, Vec<f64>)>;
}

/// Predicts the states a primitive will produce.
pub trait Predictor {
    fn predict(&self, id: PrimitiveId, initial: &[f64], world: &WorldState, rng: &mut dyn rand::RngCore) -> Result<Vec<Vec<f64>>>;
}

/// Which states the planner sees.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlannerCadence {
    /// The initial state and the last state of each finished primitive.
    Boundary,
    /// Every state so far.
    EveryStep,
}

/// State that seeds the next primitive.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SeedSource {
    /// The world state after IK execution.
    Executed,
    /// The last predicted state, open loop.
    Predicted,
}

/// Replays the task's fixed primitive order.
#[derive(Clone, Debug)]
pub struct LabelPlanner {
    pub count: usize,
    pub cadence: PlannerCadence,
    pub horizons: Vec<usize>,
}

impl LabelPlanner {
    pub fn new(task: &TaskSpec, cadence: PlannerCadence) -> Self {
        Self {
            count: task.primitive_count(),
            cadence,
            horizons: task.horizons(),
        }
    }
}

impl Planner for LabelPlanner {
    fn plan_next(&self, observed: &[&[f64]]) -> Result<(PrimitiveId, Vec<f64>)> {
        if observed.is_empty() {
            return Err(Error::Contract("planner needs at least one observed state".into()));
        }
        let done = match self.cadence {
            PlannerCadence::Boundary => observed.len() - 1,
            PlannerCadence::EveryStep => {
                let mut t = observed.len() - 1;
                self.horizons.iter().take_while(|&&h| {
                    let ok = t >= h;
                    t = t.saturating_sub(h);
                    ok
                })
                .count()
            }
        };
        let i = done.min(self.count - 1);
        let mut p = vec![0.0; self.count];
        p[i] = 1.0;
        Ok((PrimitiveId::from_index(i), p))
    }
}

/// Ground-truth predictions from the scripted primitives.
#[derive(Clone, Debug)]
pub struct ScriptedPredictor {
    pub task: TaskSpec,
}

impl Predictor for ScriptedPredictor {
    fn predict(&self, id: PrimitiveId, _initial: &[f64], world: &WorldState, _rng: &mut dyn rand::RngCore) -> Result<Vec<Vec<f64>>> {
        let script = script_primitive(&self.task, id, world)?;
        let base = world.state_vector();
        Ok(script
            .waypoints
            .iter()
            .map(|g| {
                let mut s = base.clone();
                s[..7].copy_from_slice(&g[0].to_block());
                s[7..14].copy_from_slice(&g[1].to_block());
                s
            })
            .collect())
    }
}

/// Learned dynamics, optionally trained on relational coordinates.
pub struct BankPredictor<'a> {
    pub bank: &'a ModelBank,
    pub mode: LatentMode,
    pub relational: bool,
}

impl Predictor for BankPredictor<'_> {
    fn predict(&self, id: PrimitiveId, initial: &[f64], _world: &WorldState, rng: &mut dyn rand::RngCore) -> Result<Vec<Vec<f64>>> {
        if self.relational {
            let input = to_relational(initial)?;
            self.bank
                .rollout_primitive(id, &input, rng, self.mode)?
                .iter()
                .map(|s| from_relational(s))
                .collect()
        } else {
            self.bank.rollout_primitive(id, initial, rng, self.mode)
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlannerDecision {
    /// Executed steps before the decision.
    pub step: usize,
    pub primitive: PrimitiveId,
    pub probabilities: Vec<f64>,
}

/// Everything recorded during one closed-loop execution.
#[derive(Clone, Debug, PartialEq)]
pub struct RolloutTrace {
    pub initial: Vec<f64>,
    pub predicted: Vec<Vec<f64>>,
    pub executed: Vec<Vec<f64>>,
    pub labels: Vec<PrimitiveId>,
    /// Position residual of the left and right IK solve at each step.
    pub ik_residuals: Vec<[f64; 2]>,
    pub decisions: Vec<PlannerDecision>,
    /// First execution fault, if any.
    pub failure: Option<String>,
    pub success: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RolloutOptions {
    pub cadence: PlannerCadence,
    pub seed_source: SeedSource,
}

impl Default for RolloutOptions {
    fn default() -> Self {
        Self {
            cadence: PlannerCadence::Boundary,
            seed_source: SeedSource::Executed,
        }
    }
}

fn gripper_targets(state: &[f64]) -> Result<[Pose; 2]> {
    Ok([Pose::from_block(&state[..7])?, Pose::from_block(&state[7..14])?])
}

/// Plans, predicts and executes primitives until the task's primitive
/// count is reached. Execution faults mark the trace failed, and the
/// rollout carries on without the failing directives.
pub fn closed_loop_rollout<R: Rng>(
    task: &TaskSpec,
    planner: &dyn Planner,
    predictor: &dyn Predictor,
    initial_world: &WorldState,
    options: RolloutOptions,
    rng: &mut R,
) -> Result<RolloutTrace> {
    let mut world = initial_world.clone();
    let initial = world.state_vector();
    let mut trace = RolloutTrace {
        initial: initial.clone(),
        predicted: Vec::new(),
        executed: Vec::new(),
        labels: Vec::new(),
        ik_residuals: Vec::new(),
        decisions: Vec::new(),
        failure: None,
        success: false,
    };
    let mut boundary = vec![initial.clone()];
    let mut seed = initial;
    for _ in 0..task.primitive_count() {
        let observed: Vec<&[f64]> = match options.cadence {
            PlannerCadence::Boundary => boundary.iter().map(Vec::as_slice).collect(),
            PlannerCadence::EveryStep => std::iter::once(trace.initial.as_slice())
                .chain(trace.executed.iter().map(Vec::as_slice))
                .collect(),
        };
        let (id, probabilities) = planner.plan_next(&observed)?;
        trace.decisions.push(PlannerDecision {
            step: trace.executed.len(),
            primitive: id,
            probabilities,
        });
        let mut predicted = predictor.predict(id, &seed, &world, rng)?;
        let directives = primitive_directives(task, id)?;
        let last = predicted.len().saturating_sub(1);
        for (k, state) in predicted.iter_mut().enumerate() {
            renormalize_quaternions(state)?;
            let targets = gripper_targets(state)?;
            let directives = if k == last { &directives[..] } else { &[] };
            let (next, ik) = match world.step_world(&targets, directives) {
                Ok(r) => r,
                Err(e) => {
                    trace.failure.get_or_insert_with(|| format!("step {}: {e}", trace.executed.len() + 1));
                    world.step(&targets)
                }
            };
            world = next;
            trace.executed.push(world.state_vector());
            trace.ik_residuals.push([ik[0].position_residual, ik[1].position_residual]);
            trace.labels.push(id);
        }
        seed = match options.seed_source {
            SeedSource::Executed => world.state_vector(),
            SeedSource::Predicted => predicted.last().cloned().unwrap_or_else(|| world.state_vector()),
        };
        boundary.push(match options.cadence {
            PlannerCadence::Boundary if options.seed_source == SeedSource::Predicted => seed.clone(),
            _ => world.state_vector(),
        });
        trace.predicted.extend(predicted);
    }
    trace.success = trace.failure.is_none() && task.world_success(&world);
    Ok(trace)
}

/// Writes a trace as CSV: one row per executed step with the active
/// primitive, a decision marker, IK residuals, then predicted and
/// executed features.
pub fn write_trace<W: Write>(trace: &RolloutTrace, task: &TaskSpec, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let names = task.feature_names();
    let mut header = vec!["t".to_string(), "primitive_id".into(), "decision".into(), "ik_left".into(), "ik_right".into()];
    header.extend(names.iter().map(|n| format!("pred_{n}")));
    header.extend(names.iter().map(|n| format!("exec_{n}")));
    w.write_record(&header).map_err(|e| Error::Data(e.to_string()))?;
    let starts: Vec<usize> = trace.decisions.iter().map(|d| d.step).collect();
    for t in 0..trace.executed.len() {
        let mut row = vec![
            (t + 1).to_string(),
            trace.labels[t].get().to_string(),
            u8::from(starts.contains(&t)).to_string(),
            trace.ik_residuals[t][0].to_string(),
            trace.ik_residuals[t][1].to_string(),
        ];
        row.extend(trace.predicted[t].iter().map(f64::to_string));
        row.extend(trace.executed[t].iter().map(f64::to_string));
        w.write_record(&row).map_err(|e| Error::Data(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}
