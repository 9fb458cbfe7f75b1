use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{RunConfig, Variant};
use super::rollout::{closed_loop_rollout, BankPredictor, Planner, RolloutOptions, RolloutTrace};
use crate::dynamics::{segments_by_primitive, train_dynamics, ModelBank};
use crate::error::{Error, Result};
use crate::metrics::{EvalAccumulator, EvalReport};
use crate::planning::{planner_examples, train_planner, PlannerModel};
use crate::tasks::{demo_rng, generate_dataset, run_demo, sample_spawn, to_relational_coordinates, Dataset, TaskSpec};

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Training demonstrations for a run.
pub fn training_dataset(config: &RunConfig, task: &TaskSpec) -> Result<Dataset> {
    generate_dataset(task, config.data.demos, config.seeds().demos)
}

/// Spawns used for evaluation; drawn from a stream disjoint from training.
pub fn held_out_spawns(config: &RunConfig, task: &TaskSpec) -> Vec<Vec<[f64; 2]>> {
    let master = config.seeds().eval_spawns;
    (0..config.data.eval_spawns as u64)
        .map(|i| sample_spawn(task, &mut demo_rng(master, i)))
        .collect()
}

/// Freshly initialized bank for the configured variant.
pub fn build_bank(config: &RunConfig, task: &TaskSpec) -> Result<ModelBank> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seeds().dynamics_init);
    ModelBank::new(config.dynamics_arch(task), task.horizons(), config.variant.multi, &mut rng)
}

pub fn build_planner(config: &RunConfig, task: &TaskSpec) -> Result<PlannerModel> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seeds().planner_init);
    PlannerModel::new(config.planner_arch(task), &mut rng)
}

/// Trains a bank on `dataset` (raw coordinates; the relational transform
/// is applied here when the variant asks for it). Returns per-epoch losses.
pub fn fit_bank(
    config: &RunConfig,
    task: &TaskSpec,
    dataset: &Dataset,
    on_epoch: impl FnMut(usize, f64),
) -> Result<(ModelBank, Vec<f64>)> {
    let data = if config.variant.relational {
        to_relational_coordinates(dataset)?
    } else {
        dataset.clone()
    };
    let segments = segments_by_primitive(task, &data)?;
    let mut bank = build_bank(config, task)?;
    let losses = train_dynamics(&mut bank, &segments, &config.dynamics_train(), on_epoch)?;
    Ok((bank, losses))
}

pub fn fit_planner(
    config: &RunConfig,
    task: &TaskSpec,
    dataset: &Dataset,
    on_epoch: impl FnMut(usize, f64),
) -> Result<(PlannerModel, Vec<f64>)> {
    let examples = planner_examples(task, dataset, config.planner.cadence)?;
    let mut planner = build_planner(config, task)?;
    let losses = train_planner(&mut planner, &examples, &config.planner_train(), on_epoch)?;
    Ok((planner, losses))
}

/// Closed-loop rollouts from every spawn, scored against the scripted
/// demonstration from the same spawn. Rollouts whose primitive sequence
/// differs in length from the demonstration count toward success only.
pub fn evaluate(
    config: &RunConfig,
    task: &TaskSpec,
    planner: &dyn Planner,
    bank: &ModelBank,
    spawns: &[Vec<[f64; 2]>],
) -> Result<(EvalReport, Vec<RolloutTrace>)> {
    let predictor = BankPredictor {
        bank,
        mode: config.rollout.latent_mode,
        relational: config.variant.relational,
    };
    let options = RolloutOptions {
        cadence: config.planner.cadence,
        seed_source: config.rollout.seed_source,
    };
    let names = task.primitives.iter().map(|p| p.name.to_string()).collect();
    let mut acc = EvalAccumulator::new(names, config.rollout.dtw_normalize);
    let mut traces = Vec::with_capacity(spawns.len());
    let master = config.seeds().rollout;
    for (i, spawn) in spawns.iter().enumerate() {
        let world = task.initial_world(spawn)?;
        let truth = run_demo(task, spawn)?;
        let mut rng = demo_rng(master, i as u64);
        let trace = closed_loop_rollout(task, planner, &predictor, &world, options, &mut rng)?;
        if trace.predicted.len() == truth.states.len() {
            acc.add(&trace.predicted, &truth.states, &truth.labels, trace.success)?;
        } else {
            acc.add_outcome(trace.success);
        }
        traces.push(trace);
    }
    Ok((acc.finish(config.variant.label())?, traces))
}

/// One row of the ablation grid.
#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub variant: Variant,
    pub parameters: usize,
    pub final_loss: f64,
    pub losses: Vec<f64>,
    pub report: EvalReport,
}

/// Trains and evaluates every (graph, residual, multi) combination on the
/// same data, planner and spawns. `on_cell` sees each finished row.
pub fn run_ablation(
    config: &RunConfig,
    task: &TaskSpec,
    dataset: &Dataset,
    planner: &dyn Planner,
    mut on_cell: impl FnMut(&AblationRow),
) -> Result<Vec<AblationRow>> {
    let spawns = held_out_spawns(config, task);
    let mut rows = Vec::new();
    for variant in Variant::grid() {
        let mut cell = config.clone();
        cell.variant = Variant {
            relational: config.variant.relational,
            ..variant
        };
        let (bank, losses) = fit_bank(&cell, task, dataset, |_, _| {})?;
        let (report, _) = evaluate(&cell, task, planner, &bank, &spawns)?;
        let row = AblationRow {
            variant: cell.variant,
            parameters: bank.parameter_count(),
            final_loss: losses.last().copied().unwrap_or(f64::NAN),
            losses,
            report,
        };
        on_cell(&row);
        rows.push(row);
    }
    Ok(rows)
}

/// Ablation table: the feature flags followed by the report columns.
pub fn write_ablation_csv<W: Write>(rows: &[AblationRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "model",
        "graph",
        "residual",
        "multi",
        "parameters",
        "final_loss",
        "euclidean_cm_mean",
        "euclidean_cm_std",
        "angular_rad_mean",
        "angular_rad_std",
        "dtw",
        "success_rate",
    ])
    .map_err(csv_err)?;
    for r in rows {
        let p = &r.report;
        w.write_record([
            p.model.clone(),
            r.variant.graph.to_string(),
            r.variant.residual.to_string(),
            r.variant.multi.to_string(),
            r.parameters.to_string(),
            r.final_loss.to_string(),
            p.euclidean_cm_mean.to_string(),
            p.euclidean_cm_std.to_string(),
            p.angular_rad_mean.to_string(),
            p.angular_rad_std.to_string(),
            p.dtw.to_string(),
            p.success_rate.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_losses_csv<W: Write>(losses: &[f64], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["epoch", "loss"]).map_err(csv_err)?;
    for (e, l) in losses.iter().enumerate() {
        w.write_record([(e + 1).to_string(), l.to_string()]).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_losses_csv<R: std::io::Read>(input: R) -> Result<Vec<f64>> {
    let mut r = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let line = i as u64 + 2;
        let loss = rec
            .get(1)
            .and_then(|s| s.parse::<f64>().ok())
            .ok_or_else(|| Error::Parse {
                line,
                message: "expected epoch,loss".into(),
            })?;
        out.push(loss);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionEdge {
    pub model: usize,
    pub source: String,
    pub target: String,
    pub weight: f64,
    pub visible: bool,
}

/// Encoder attention of each bank model on `state`, one edge per node
/// pair; `visible` marks weights strictly above `threshold`.
pub fn attention_edges(bank: &ModelBank, task: &TaskSpec, state: &[f64], threshold: f64) -> Result<Vec<AttentionEdge>> {
    let names = task.feature_names();
    let mut edges = Vec::new();
    for (k, model) in bank.models().iter().enumerate() {
        let Some(alpha) = model.attention(state)? else {
            return Err(Error::Config("attention export needs a variant with the graph layer".into()));
        };
        for (u, row) in alpha.iter().enumerate() {
            for (v, &weight) in row.iter().enumerate() {
                edges.push(AttentionEdge {
                    model: k,
                    source: names[u].clone(),
                    target: names[v].clone(),
                    weight,
                    visible: weight > threshold,
                });
            }
        }
    }
    Ok(edges)
}

pub fn write_attention_csv<W: Write>(edges: &[AttentionEdge], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["model", "source", "target", "weight", "visible"])
        .map_err(csv_err)?;
    for e in edges {
        w.write_record([
            e.model.to_string(),
            e.source.clone(),
            e.target.clone(),
            e.weight.to_string(),
            e.visible.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}
