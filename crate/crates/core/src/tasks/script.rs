use std::f64::consts::PI;

use nalgebra::{UnitQuaternion, Vector3};

use super::spec::{PrimitiveId, TaskKind, TaskSpec};
use crate::error::{Error, Result};
use crate::kinematics::{Directive, GraspTarget, Pose, WorldState};

/// Gripper targets for each step of one primitive, plus the directives
/// issued at its final step.
#[derive(Clone, Debug, PartialEq)]
pub struct Script {
    pub waypoints: Vec<[Pose; 2]>,
    pub directives: Vec<Directive>,
}

/// Cubic ease-in/ease-out on `[0, 1]`.
pub fn ease(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

fn down() -> UnitQuaternion<f64> {
    UnitQuaternion::from_axis_angle(&Vector3::y_axis(), PI)
}

const HOVER: f64 = 0.08;
const STAGING: [f64; 2] = [0.55, 0.0];
const LIFT: f64 = 0.20;
const EXTEND_X: f64 = 0.75;
const RETRACT: [f64; 3] = [-0.15, 0.0, 0.05];
const ASSEMBLY_Y: f64 = 0.2125;
const ASSEMBLY_X: f64 = 0.60;
const CARRY: f64 = 0.05;
const INSERT_GAP: f64 = 0.05;
const PEG_EXTEND: f64 = 0.15;
const PEG_PLACE_DROP: f64 = 0.08;

fn grasp(left: (usize, usize), right: (usize, usize)) -> Directive {
    Directive::Grasp {
        left: Some(GraspTarget {
            object: left.0,
            handle: left.1,
        }),
        right: Some(GraspTarget {
            object: right.0,
            handle: right.1,
        }),
    }
}

const RELEASE: Directive = Directive::Release {
    left: true,
    right: true,
};

/// Attachment directives issued at the last step of a primitive. They
/// depend only on the primitive, never on learned outputs.
pub fn primitive_directives(task: &TaskSpec, id: PrimitiveId) -> Result<Vec<Directive>> {
    task.primitive(id)?;
    let n = id.get();
    Ok(match task.kind {
        TaskKind::TableLift => match n {
            1 => vec![grasp((0, 0), (0, 1))],
            5 => vec![RELEASE],
            _ => vec![],
        },
        TaskKind::PegInHole => match n {
            2 => vec![grasp((0, 0), (0, 1))],
            4 => vec![RELEASE],
            7 => vec![grasp((1, 0), (1, 1))],
            9 => vec![
                Directive::Join {
                    child: 1,
                    parent: 0,
                    child_point: task.peg_local,
                    parent_point: task.hole_local,
                    tolerance: task.peg_thresholds.alignment_tol,
                },
                RELEASE,
            ],
            10 => vec![grasp((0, 0), (1, 1))],
            13 => vec![RELEASE],
            _ => vec![],
        },
    })
}

fn at_handle(world: &WorldState, object: usize, handle: usize, lift: f64) -> Result<Pose> {
    let p = world.handle_point(GraspTarget { object, handle })?;
    Ok(Pose::new(p + Vector3::new(0.0, 0.0, lift), down()))
}

fn shifted(world: &WorldState, delta: Vector3<f64>) -> [Pose; 2] {
    world
        .grippers
        .map(|g| Pose::new(g.position + delta, g.orientation))
}

/// Grippers moved so that `object`'s center lands on `goal`.
fn carried(world: &WorldState, object: usize, goal: Vector3<f64>) -> [Pose; 2] {
    shifted(world, goal - world.objects[object].pose.position)
}

fn goals(task: &TaskSpec, id: PrimitiveId, world: &WorldState) -> Result<[Pose; 2]> {
    let n = id.get();
    let center = |o: usize| world.objects[o].pose.position;
    Ok(match task.kind {
        TaskKind::TableLift => match n {
            1 => [at_handle(world, 0, 0, 0.0)?, at_handle(world, 0, 1, 0.0)?],
            2 => carried(world, 0, Vector3::new(STAGING[0], STAGING[1], center(0).z)),
            3 => shifted(world, Vector3::new(0.0, 0.0, LIFT)),
            4 => carried(world, 0, Vector3::new(EXTEND_X, center(0).y, center(0).z)),
            5 => {
                let c = center(0);
                carried(world, 0, Vector3::new(c.x, c.y, task.table_thresholds.placed_height))
            }
            6 => shifted(world, Vector3::from(RETRACT)),
            _ => return Err(Error::UnknownPrimitive(n)),
        },
        TaskKind::PegInHole => {
            let rest = task.table_height;
            match n {
                1 => [at_handle(world, 0, 0, HOVER)?, at_handle(world, 0, 1, HOVER)?],
                2 => [at_handle(world, 0, 0, 0.0)?, at_handle(world, 0, 1, 0.0)?],
                3 => carried(world, 0, Vector3::new(ASSEMBLY_X, ASSEMBLY_Y, rest + CARRY)),
                4 => carried(world, 0, Vector3::new(ASSEMBLY_X, ASSEMBLY_Y, rest)),
                5 => shifted(world, Vector3::new(0.0, 0.0, 0.10)),
                6 => [at_handle(world, 1, 0, HOVER)?, at_handle(world, 1, 1, HOVER)?],
                7 => [at_handle(world, 1, 0, 0.0)?, at_handle(world, 1, 1, 0.0)?],
                8 => carried(
                    world,
                    1,
                    Vector3::new(ASSEMBLY_X, -ASSEMBLY_Y - INSERT_GAP, rest + CARRY),
                ),
                9 => carried(world, 1, Vector3::new(ASSEMBLY_X, -ASSEMBLY_Y, rest)),
                10 => [at_handle(world, 0, 0, 0.0)?, at_handle(world, 1, 1, 0.0)?],
                11 => shifted(world, Vector3::new(0.0, 0.0, LIFT)),
                12 => shifted(world, Vector3::new(PEG_EXTEND, 0.0, 0.0)),
                13 => shifted(world, Vector3::new(0.0, 0.0, -PEG_PLACE_DROP)),
                _ => return Err(Error::UnknownPrimitive(n)),
            }
        }
    })
}

/// Eased interpolation from the current gripper poses to the primitive's
/// goal, one waypoint per step of its horizon.
pub fn script_primitive(task: &TaskSpec, id: PrimitiveId, world: &WorldState) -> Result<Script> {
    let horizon = task.horizon(id)?;
    let goal = goals(task, id, world)?;
    for (arm, g) in world.arms.iter().zip(&goal) {
        let d = (g.position - arm.shoulder()).norm();
        if d > arm.reach() * 0.98 {
            return Err(Error::Workspace(format!(
                "primitive {id} goal {:.3} m from the shoulder exceeds reach {:.3} m",
                d,
                arm.reach()
            )));
        }
    }
    let start = world.grippers;
    let waypoints = (1..=horizon)
        .map(|k| {
            let s = ease(k as f64 / horizon as f64);
            std::array::from_fn(|i| {
                let position = start[i].position.lerp(&goal[i].position, s);
                let orientation = start[i].orientation.slerp(&goal[i].orientation, s);
                Pose::new(position, orientation)
            })
        })
        .collect();
    Ok(Script {
        waypoints,
        directives: primitive_directives(task, id)?,
    })
}
