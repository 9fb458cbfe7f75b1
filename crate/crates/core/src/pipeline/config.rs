use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::rollout::{PlannerCadence, SeedSource};
use crate::dynamics::{DynamicsArch, DynamicsTrainConfig, EncoderFeeding, LatentMode};
use crate::error::{Error, Result};
use crate::kinematics::{ArmGeometry, PegThresholds, TableThresholds};
use crate::planning::{PlannerArch, PlannerTrainConfig};
use crate::tasks::{TaskKind, TaskSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Profile {
    Desk,
    Paper,
}

impl FromStr for Profile {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Self::Desk),
            "paper" | "paper-scale" => Ok(Self::Paper),
            _ => Err(Error::Config(format!("unknown profile {s:?} (expected desk or paper)"))),
        }
    }
}

/// Which architectural features are switched on, plus the data encoding.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Variant {
    pub graph: bool,
    pub residual: bool,
    pub multi: bool,
    #[serde(default)]
    pub relational: bool,
}

impl Variant {
    pub const FULL: Variant = Variant {
        graph: true,
        residual: true,
        multi: true,
        relational: false,
    };

    /// Row label used in ablation tables, e.g. `ResInt Multi`.
    pub fn label(&self) -> String {
        let mut base = match (self.residual, self.graph) {
            (false, false) => "GRU-GRU".to_string(),
            (true, false) => "Res".into(),
            (false, true) => "Int".into(),
            (true, true) => "ResInt".into(),
        };
        if self.multi {
            base.push_str(" Multi");
        }
        if self.relational {
            base.push_str(" (relational)");
        }
        base
    }

    /// The eight (graph, residual, multi) rows in table order.
    pub fn grid() -> Vec<Variant> {
        let mut out = Vec::new();
        for multi in [false, true] {
            for (residual, graph) in [(false, false), (true, false), (false, true), (true, true)] {
                out.push(Variant {
                    graph,
                    residual,
                    multi,
                    relational: false,
                });
            }
        }
        out
    }
}

impl FromStr for Variant {
    type Err = Error;
    /// Comma-separated feature list such as `graph,res,multi`; `none` or
    /// an empty string selects the plain GRU-GRU model.
    fn from_str(s: &str) -> Result<Self> {
        let mut v = Variant::default();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part {
                "graph" | "int" => v.graph = true,
                "res" | "residual" => v.residual = true,
                "multi" => v.multi = true,
                "relational" | "rel" => v.relational = true,
                "none" => {}
                _ => return Err(Error::Config(format!("unknown variant flag {part:?}"))),
            }
        }
        Ok(v)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub hidden: usize,
    pub gat_width: usize,
    pub encoder_fc_layers: usize,
    pub decoder_fc_layers: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicsSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub encoder_lr: f64,
    pub decoder_lr: f64,
    pub beta: f64,
    pub feeding: EncoderFeeding,
    pub latent: LatentMode,
    pub normalize: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlannerSection {
    pub hidden: usize,
    pub graph: bool,
    pub fc_layers: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub cadence: PlannerCadence,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    /// Training demonstrations.
    pub demos: usize,
    /// Held-out spawns for evaluation rollouts.
    pub eval_spawns: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RolloutSection {
    pub latent_mode: LatentMode,
    pub seed_source: SeedSource,
    pub dtw_normalize: bool,
    pub attention_threshold: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldSection {
    pub grasp_tolerance: f64,
    pub max_step: f64,
    pub table: TableThresholds,
    pub peg: PegThresholds,
    pub arm: ArmGeometry,
}

/// Fully resolved settings for one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub task: TaskKind,
    pub profile: Profile,
    pub seed: u64,
    pub variant: Variant,
    pub model: ModelSection,
    pub dynamics: DynamicsSection,
    pub planner: PlannerSection,
    pub data: DataSection,
    pub rollout: RolloutSection,
    pub world: WorldSection,
}

/// Values given on the command line; they win over the file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub task: Option<TaskKind>,
    pub profile: Option<Profile>,
    pub seed: Option<u64>,
    pub variant: Option<Variant>,
    pub latent_mode: Option<LatentMode>,
}

impl RunConfig {
    /// Built-in defaults for a profile, task and variant.
    pub fn profile_defaults(profile: Profile, task: TaskKind, variant: Variant) -> Self {
        let spec = match task {
            TaskKind::TableLift => TaskSpec::table_lift(),
            TaskKind::PegInHole => TaskSpec::peg_in_hole(),
        };
        let world = WorldSection {
            grasp_tolerance: spec.grasp_tolerance,
            max_step: spec.max_step,
            table: spec.table_thresholds,
            peg: spec.peg_thresholds,
            arm: spec.arm,
        };
        let rollout = RolloutSection {
            latent_mode: LatentMode::Mean,
            seed_source: SeedSource::Executed,
            dtw_normalize: true,
            attention_threshold: 0.08,
        };
        match profile {
            Profile::Desk => Self {
                task,
                profile,
                seed: 0,
                variant,
                model: ModelSection {
                    hidden: 64,
                    gat_width: 4,
                    encoder_fc_layers: 1,
                    decoder_fc_layers: 1,
                },
                dynamics: DynamicsSection {
                    epochs: 500,
                    batch_size: 8,
                    encoder_lr: 3e-3,
                    decoder_lr: 3e-3,
                    beta: 0.0,
                    feeding: EncoderFeeding::Teacher,
                    latent: LatentMode::Sample,
                    normalize: true,
                },
                planner: PlannerSection {
                    hidden: 64,
                    graph: true,
                    fc_layers: 1,
                    epochs: 100,
                    batch_size: 32,
                    learning_rate: 3e-3,
                    cadence: PlannerCadence::Boundary,
                },
                data: DataSection {
                    demos: 200,
                    eval_spawns: 50,
                },
                rollout,
                world,
            },
            Profile::Paper => {
                // (encoder lr, decoder lr, hidden, encoder fc, decoder fc)
                let (elr, dlr, hidden, efc, dfc) = match (task, variant.multi) {
                    (TaskKind::TableLift, true) => (1e-5, 4e-5, 512, 3, 5),
                    (TaskKind::TableLift, false) => (2e-4, 4e-5, 512, 18, 19),
                    (TaskKind::PegInHole, true) => (5e-5, 5e-5, 512, 3, 5),
                    (TaskKind::PegInHole, false) => (5e-5, 5e-5, 1024, 20, 21),
                };
                let (plr, pfc) = match task {
                    TaskKind::TableLift => (5e-5, 3),
                    TaskKind::PegInHole => (1e-5, 9),
                };
                let (demos, epochs, batch, eval) = match task {
                    TaskKind::TableLift => (2500, 12_500, 70, 127),
                    TaskKind::PegInHole => (4700, 18_800, 130, 281),
                };
                Self {
                    task,
                    profile,
                    seed: 0,
                    variant,
                    model: ModelSection {
                        hidden,
                        gat_width: 4,
                        encoder_fc_layers: efc,
                        decoder_fc_layers: dfc,
                    },
                    dynamics: DynamicsSection {
                        epochs,
                        batch_size: batch,
                        encoder_lr: elr,
                        decoder_lr: dlr,
                        beta: 0.0,
                        feeding: EncoderFeeding::Teacher,
                        latent: LatentMode::Sample,
                        normalize: true,
                    },
                    planner: PlannerSection {
                        hidden: 512,
                        graph: true,
                        fc_layers: pfc,
                        epochs,
                        batch_size: batch,
                        learning_rate: plr,
                        cadence: PlannerCadence::Boundary,
                    },
                    data: DataSection { demos, eval_spawns: eval },
                    rollout,
                    world,
                }
            }
        }
    }

    /// Layers the profile defaults, then `file` (TOML text), then
    /// `overrides`. Unknown keys in the file are errors.
    pub fn resolve(file: Option<&str>, overrides: &Overrides) -> Result<Self> {
        let table: toml::Table = match file {
            Some(text) => text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?,
            None => toml::Table::new(),
        };
        let peek = |key: &str| -> Result<Option<toml::Value>> { Ok(table.get(key).cloned()) };
        let str_of = |v: toml::Value, key: &str| -> Result<String> {
            v.as_str()
                .map(String::from)
                .ok_or_else(|| Error::Config(format!("{key} must be a string")))
        };
        let task = match (overrides.task, peek("task")?) {
            (Some(t), _) => t,
            (None, Some(v)) => str_of(v, "task")?.parse()?,
            (None, None) => TaskKind::TableLift,
        };
        let profile = match (overrides.profile, peek("profile")?) {
            (Some(p), _) => p,
            (None, Some(v)) => str_of(v, "profile")?.parse()?,
            (None, None) => Profile::Desk,
        };
        let variant = match (overrides.variant, peek("variant")?) {
            (Some(v), _) => v,
            (None, Some(v)) => v
                .try_into()
                .map_err(|e: toml::de::Error| Error::Config(format!("variant: {e}")))?,
            (None, None) => Variant::FULL,
        };
        let defaults = Self::profile_defaults(profile, task, variant);
        let mut merged = toml::Table::try_from(&defaults).map_err(|e| Error::Config(e.to_string()))?;
        merge(&mut merged, table);
        let mut config: RunConfig = merged
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        config.task = task;
        config.profile = profile;
        config.variant = variant;
        if let Some(seed) = overrides.seed {
            config.seed = seed;
        }
        if let Some(mode) = overrides.latent_mode {
            config.rollout.latent_mode = mode;
        }
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<Self> {
        let text = match path {
            Some(p) => Some(
                std::fs::read_to_string(p).map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?,
            ),
            None => None,
        };
        Self::resolve(text.as_deref(), overrides)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("model.hidden", self.model.hidden),
            ("model.gat_width", self.model.gat_width),
            ("model.encoder_fc_layers", self.model.encoder_fc_layers),
            ("model.decoder_fc_layers", self.model.decoder_fc_layers),
            ("dynamics.batch_size", self.dynamics.batch_size),
            ("planner.hidden", self.planner.hidden),
            ("planner.fc_layers", self.planner.fc_layers),
            ("planner.batch_size", self.planner.batch_size),
            ("data.demos", self.data.demos),
            ("data.eval_spawns", self.data.eval_spawns),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        for (name, v) in [
            ("dynamics.encoder_lr", self.dynamics.encoder_lr),
            ("dynamics.decoder_lr", self.dynamics.decoder_lr),
            ("planner.learning_rate", self.planner.learning_rate),
            ("world.grasp_tolerance", self.world.grasp_tolerance),
            ("world.max_step", self.world.max_step),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be a positive number")));
            }
        }
        if !(self.dynamics.beta.is_finite() && self.dynamics.beta >= 0.0) {
            return Err(Error::Config("dynamics.beta must be nonnegative".into()));
        }
        if !(0.0..=1.0).contains(&self.rollout.attention_threshold) {
            return Err(Error::Config("rollout.attention_threshold must lie in [0, 1]".into()));
        }
        for (i, j) in self.world.arm.joints.iter().enumerate() {
            if j.lower >= j.upper {
                return Err(Error::Config(format!("arm joint {i}: lower limit must be below upper")));
            }
        }
        Ok(())
    }

    /// Task definition with the configured world settings applied.
    pub fn task_spec(&self) -> TaskSpec {
        let mut spec = match self.task {
            TaskKind::TableLift => TaskSpec::table_lift(),
            TaskKind::PegInHole => TaskSpec::peg_in_hole(),
        };
        spec.grasp_tolerance = self.world.grasp_tolerance;
        spec.max_step = self.world.max_step;
        spec.table_thresholds = self.world.table;
        spec.peg_thresholds = self.world.peg;
        spec.arm = self.world.arm;
        spec
    }

    pub fn dynamics_arch(&self, task: &TaskSpec) -> DynamicsArch {
        DynamicsArch {
            state_width: task.width(),
            hidden: self.model.hidden,
            graph: self.variant.graph,
            residual: self.variant.residual,
            target_entities: task.target_entities(),
            gat_width: self.model.gat_width,
            encoder_fc_layers: self.model.encoder_fc_layers,
            decoder_fc_layers: self.model.decoder_fc_layers,
        }
    }

    pub fn planner_arch(&self, task: &TaskSpec) -> PlannerArch {
        PlannerArch {
            state_width: task.width(),
            hidden: self.planner.hidden,
            primitives: task.primitive_count(),
            graph: self.planner.graph,
            gat_width: self.model.gat_width,
            fc_layers: self.planner.fc_layers,
        }
    }

    pub fn dynamics_train(&self) -> DynamicsTrainConfig {
        DynamicsTrainConfig {
            epochs: self.dynamics.epochs,
            batch_size: self.dynamics.batch_size,
            encoder_lr: self.dynamics.encoder_lr,
            decoder_lr: self.dynamics.decoder_lr,
            beta: self.dynamics.beta,
            feeding: self.dynamics.feeding,
            latent: self.dynamics.latent,
            seed: self.seeds().dynamics_training,
            normalize: self.dynamics.normalize,
        }
    }

    pub fn planner_train(&self) -> PlannerTrainConfig {
        PlannerTrainConfig {
            epochs: self.planner.epochs,
            batch_size: self.planner.batch_size,
            learning_rate: self.planner.learning_rate,
            seed: self.seeds().planner_training,
        }
    }

    /// Independent seeds derived from the run seed.
    pub fn seeds(&self) -> Seeds {
        Seeds::from_master(self.seed)
    }
}

/// Per-purpose seeds, fixed offsets from the master seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Seeds {
    pub demos: u64,
    pub eval_spawns: u64,
    pub dynamics_init: u64,
    pub dynamics_training: u64,
    pub planner_init: u64,
    pub planner_training: u64,
    pub rollout: u64,
}

impl Seeds {
    pub fn from_master(seed: u64) -> Self {
        let derive = |k: u64| seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(k);
        Self {
            demos: derive(1),
            eval_spawns: derive(2),
            dynamics_init: derive(3),
            dynamics_training: derive(4),
            planner_init: derive(5),
            planner_training: derive(6),
            rollout: derive(7),
        }
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}
