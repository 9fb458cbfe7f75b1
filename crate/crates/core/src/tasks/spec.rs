use std::fmt;
use std::str::FromStr;

use nalgebra::{UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{
    peg_in_hole_success, table_lift_success, ArmGeometry, ArmModel, Object, PegThresholds, Pose, TableThresholds,
    WorldState,
};

/// 1-based primitive label; 0 is reserved for "no primitive".
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PrimitiveId(usize);

impl PrimitiveId {
    pub fn new(id: usize) -> Result<Self> {
        if id == 0 {
            return Err(Error::UnknownPrimitive(0));
        }
        Ok(Self(id))
    }

    pub fn from_index(index: usize) -> Self {
        Self(index + 1)
    }

    pub fn get(self) -> usize {
        self.0
    }

    /// 0-based position in the task's primitive list.
    pub fn index(self) -> usize {
        self.0 - 1
    }
}

impl fmt::Display for PrimitiveId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    TableLift,
    PegInHole,
}

impl TaskKind {
    pub fn name(self) -> &'static str {
        match self {
            TaskKind::TableLift => "table-lift",
            TaskKind::PegInHole => "peg-in-hole",
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "table-lift" => Ok(TaskKind::TableLift),
            "peg-in-hole" => Ok(TaskKind::PegInHole),
            other => Err(Error::Config(format!("unknown task {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PrimitiveSpec {
    pub name: &'static str,
    pub horizon: usize,
}

/// Axis-aligned spawn rectangle for one object center: `[min, max]` in x and y.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpawnRange {
    pub x: [f64; 2],
    pub y: [f64; 2],
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskSpec {
    pub kind: TaskKind,
    /// Entity names in state-vector order (grippers first).
    pub entities: Vec<&'static str>,
    pub primitives: Vec<PrimitiveSpec>,
    pub spawn: Vec<SpawnRange>,
    /// Table extents (x, y) per object, meters.
    pub table_size: [f64; 2],
    /// Reference height of a table resting on the ground.
    pub table_height: f64,
    /// Grasp handles per object, in object-local coordinates.
    pub handles: Vec<Vector3<f64>>,
    pub arm_bases: [Vector3<f64>; 2],
    pub arm: ArmGeometry,
    pub ready_joints: [[f64; 7]; 2],
    pub table_thresholds: TableThresholds,
    pub peg_thresholds: PegThresholds,
    /// Peg point on the right table and hole point on the left table.
    pub peg_local: Vector3<f64>,
    pub hole_local: Vector3<f64>,
    /// Upper bound on any gripper displacement between consecutive states.
    pub max_step: f64,
    pub grasp_tolerance: f64,
}

const READY_LEFT: [f64; 7] = [0.3, 0.2, 0.0, 2.0, 0.0, 0.94159, 0.0];
const READY_RIGHT: [f64; 7] = [-0.3, 0.2, 0.0, 2.0, 0.0, 0.94159, 0.0];

impl TaskSpec {
    pub fn new(kind: TaskKind) -> Self {
        match kind {
            TaskKind::TableLift => Self::table_lift(),
            TaskKind::PegInHole => Self::peg_in_hole(),
        }
    }

    pub fn table_lift() -> Self {
        let names = ["Front Grasp", "Move", "Lift", "Extend", "Place", "Retract"];
        let horizons = [12, 12, 12, 12, 12, 10];
        Self {
            kind: TaskKind::TableLift,
            entities: vec!["left_gripper", "right_gripper", "table"],
            primitives: names
                .iter()
                .zip(horizons)
                .map(|(&name, horizon)| PrimitiveSpec { name, horizon })
                .collect(),
            spawn: vec![SpawnRange {
                x: [0.45, 0.65],
                y: [-0.30, 0.30],
            }],
            table_size: [0.35, 0.85],
            table_height: 0.30,
            handles: vec![Vector3::new(-0.125, 0.40, 0.0), Vector3::new(-0.125, -0.40, 0.0)],
            arm_bases: [Vector3::new(0.0, 0.22, 0.55), Vector3::new(0.0, -0.22, 0.55)],
            arm: ArmGeometry::default(),
            ready_joints: [READY_LEFT, READY_RIGHT],
            table_thresholds: TableThresholds::default(),
            peg_thresholds: PegThresholds::default(),
            peg_local: Vector3::zeros(),
            hole_local: Vector3::zeros(),
            max_step: 0.15,
            grasp_tolerance: 0.03,
        }
    }

    pub fn peg_in_hole() -> Self {
        let names = [
            "approach-L",
            "grasp-L",
            "move-L",
            "place-L",
            "release-L",
            "approach-R",
            "grasp-R",
            "move-R",
            "insert-R",
            "regrasp-both",
            "lift",
            "extend",
            "place",
        ];
        Self {
            kind: TaskKind::PegInHole,
            entities: vec!["left_gripper", "right_gripper", "table_left", "table_right"],
            primitives: names
                .iter()
                .map(|&name| PrimitiveSpec { name, horizon: 10 })
                .collect(),
            spawn: vec![
                SpawnRange {
                    x: [0.50, 0.70],
                    y: [0.35, 0.55],
                },
                SpawnRange {
                    x: [0.50, 0.70],
                    y: [-0.55, -0.35],
                },
            ],
            table_size: [0.35, 0.425],
            table_height: 0.30,
            handles: vec![Vector3::new(-0.15, 0.15, 0.0), Vector3::new(-0.15, -0.15, 0.0)],
            arm_bases: [Vector3::new(0.0, 0.22, 0.55), Vector3::new(0.0, -0.22, 0.55)],
            arm: ArmGeometry::default(),
            ready_joints: [READY_LEFT, READY_RIGHT],
            table_thresholds: TableThresholds::default(),
            peg_thresholds: PegThresholds::default(),
            peg_local: Vector3::new(0.0, 0.2125, 0.0),
            hole_local: Vector3::new(0.0, -0.2125, 0.0),
            max_step: 0.15,
            grasp_tolerance: 0.03,
        }
    }

    pub fn width(&self) -> usize {
        7 * self.entities.len()
    }

    pub fn object_count(&self) -> usize {
        self.entities.len() - 2
    }

    pub fn primitive_count(&self) -> usize {
        self.primitives.len()
    }

    pub fn total_steps(&self) -> usize {
        self.primitives.iter().map(|p| p.horizon).sum()
    }

    pub fn primitive(&self, id: PrimitiveId) -> Result<&PrimitiveSpec> {
        self.primitives
            .get(id.index())
            .ok_or(Error::UnknownPrimitive(id.get()))
    }

    pub fn horizon(&self, id: PrimitiveId) -> Result<usize> {
        Ok(self.primitive(id)?.horizon)
    }

    pub fn horizons(&self) -> Vec<usize> {
        self.primitives.iter().map(|p| p.horizon).collect()
    }

    /// First step index (0-based, into the 70/130 post-step states) of
    /// each primitive.
    pub fn boundaries(&self) -> Vec<usize> {
        self.primitives
            .iter()
            .scan(0, |acc, p| {
                let start = *acc;
                *acc += p.horizon;
                Some(start)
            })
            .collect()
    }

    /// Per-step labels for a full demonstration.
    pub fn labels(&self) -> Vec<PrimitiveId> {
        self.primitives
            .iter()
            .enumerate()
            .flat_map(|(i, p)| std::iter::repeat_n(PrimitiveId::from_index(i), p.horizon))
            .collect()
    }

    /// State-vector blocks (entity indices) fed to the residual skip.
    pub fn target_entities(&self) -> Vec<usize> {
        (2..self.entities.len()).collect()
    }

    pub fn arms(&self) -> [ArmModel; 2] {
        self.arm_bases
            .map(|b| ArmModel::from_geometry(&self.arm, Pose::from_position(b)))
    }

    /// World at the ready pose with objects centered at `spawn` (x, y).
    pub fn initial_world(&self, spawn: &[[f64; 2]]) -> Result<WorldState> {
        if spawn.len() != self.object_count() {
            return Err(Error::Dimension(format!(
                "{} spawn points for {} objects",
                spawn.len(),
                self.object_count()
            )));
        }
        let objects = spawn
            .iter()
            .zip(&self.entities[2..])
            .map(|(s, name)| Object {
                name: (*name).to_string(),
                pose: Pose::new(
                    Vector3::new(s[0], s[1], self.table_height),
                    UnitQuaternion::identity(),
                ),
                handles: self.handles.clone(),
            })
            .collect();
        let mut world = WorldState::new(self.arms(), self.ready_joints, objects)?;
        world.grasp_tolerance = self.grasp_tolerance;
        Ok(world)
    }

    /// Success predicate on object poses.
    pub fn success(&self, objects: &[Pose]) -> bool {
        match self.kind {
            TaskKind::TableLift => objects
                .first()
                .is_some_and(|t| table_lift_success(t, &self.table_thresholds)),
            TaskKind::PegInHole => match objects {
                [left, right] => peg_in_hole_success(
                    left,
                    &self.hole_local,
                    right,
                    &self.peg_local,
                    &self.peg_thresholds,
                ),
                _ => false,
            },
        }
    }

    pub fn world_success(&self, world: &WorldState) -> bool {
        let poses: Vec<Pose> = world.objects.iter().map(|o| o.pose).collect();
        self.success(&poses)
    }

    /// Object poses decoded from a state vector.
    pub fn object_poses(&self, state: &[f64]) -> Result<Vec<Pose>> {
        if state.len() != self.width() {
            return Err(Error::Dimension(format!(
                "state of width {} for task of width {}",
                state.len(),
                self.width()
            )));
        }
        state[14..].chunks(7).map(Pose::from_block).collect()
    }

    pub fn gripper_poses(&self, state: &[f64]) -> Result<[Pose; 2]> {
        if state.len() != self.width() {
            return Err(Error::Dimension(format!(
                "state of width {} for task of width {}",
                state.len(),
                self.width()
            )));
        }
        Ok([Pose::from_block(&state[0..7])?, Pose::from_block(&state[7..14])?])
    }

    /// Column names: `<entity>_{x,y,z,qw,qx,qy,qz}`.
    pub fn feature_names(&self) -> Vec<String> {
        self.entities
            .iter()
            .flat_map(|e| {
                ["x", "y", "z", "qw", "qx", "qy", "qz"]
                    .iter()
                    .map(move |c| format!("{e}_{c}"))
            })
            .collect()
    }
}
