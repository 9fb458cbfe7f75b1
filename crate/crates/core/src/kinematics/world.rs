use nalgebra::Vector3;

use super::arm::ArmModel;
use super::ik::{ik_solve, IkConfig, IkResult, IkTarget};
use super::pose::Pose;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub const BOTH: [Side; 2] = [Side::Left, Side::Right];

    pub fn index(self) -> usize {
        match self {
            Side::Left => 0,
            Side::Right => 1,
        }
    }
}

/// A movable rigid body with grasp handles in its local frame.
#[derive(Clone, Debug, PartialEq)]
pub struct Object {
    pub name: String,
    pub pose: Pose,
    pub handles: Vec<Vector3<f64>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GraspTarget {
    pub object: usize,
    pub handle: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Directive {
    Grasp {
        left: Option<GraspTarget>,
        right: Option<GraspTarget>,
    },
    Release {
        left: bool,
        right: bool,
    },
    /// Rigidly links `child` to `parent` when the two local points lie
    /// within `tolerance` of each other.
    Join {
        child: usize,
        parent: usize,
        child_point: Vector3<f64>,
        parent_point: Vector3<f64>,
        tolerance: f64,
    },
}

/// `object` is always a root body; `offset` is `gripper⁻¹ ∘ object`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Attachment {
    pub side: Side,
    pub object: usize,
    pub offset: Pose,
}

/// `offset` is `parent⁻¹ ∘ child`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Link {
    pub child: usize,
    pub parent: usize,
    pub offset: Pose,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WorldState {
    pub arms: [ArmModel; 2],
    pub joints: [[f64; 7]; 2],
    pub grippers: [Pose; 2],
    pub objects: Vec<Object>,
    pub attachments: Vec<Attachment>,
    pub links: Vec<Link>,
    /// Roots held by both grippers, with offset from the midpoint frame.
    bimanual: Vec<(usize, Pose)>,
    pub grasp_tolerance: f64,
    pub ik: IkConfig,
}

const CONSISTENCY_TOL: f64 = 1e-9;

/// Grid spacing for recorded positions: 2⁻³² m.
pub const POSITION_QUANTUM: f64 = 1.0 / 4_294_967_296.0;

/// Rounds to a multiple of [`POSITION_QUANTUM`]. On this grid, sums,
/// halves and differences of positions below 2 m are exact in binary64,
/// so translating by a gripper midpoint can be undone bit for bit.
pub fn snap_position(v: f64) -> f64 {
    (v / POSITION_QUANTUM).round() * POSITION_QUANTUM
}

/// Snaps the position entries of every 7-value pose block.
pub fn snap_positions(state: &mut [f64]) {
    for block in state.chunks_mut(7) {
        for v in block.iter_mut().take(3) {
            *v = snap_position(*v);
        }
    }
}

impl WorldState {
    pub fn new(arms: [ArmModel; 2], joints: [[f64; 7]; 2], objects: Vec<Object>) -> Result<Self> {
        let grippers = [arms[0].forward(&joints[0])?, arms[1].forward(&joints[1])?];
        Ok(Self {
            arms,
            joints,
            grippers,
            objects,
            attachments: Vec::new(),
            links: Vec::new(),
            bimanual: Vec::new(),
            grasp_tolerance: 0.03,
            ik: IkConfig::default(),
        })
    }

    pub fn gripper(&self, side: Side) -> &Pose {
        &self.grippers[side.index()]
    }

    /// Grippers then objects, 7 values each. Positions are snapped to
    /// the [`snap_position`] grid.
    pub fn state_vector(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self
            .grippers
            .iter()
            .chain(self.objects.iter().map(|o| &o.pose))
            .flat_map(|p| p.to_block())
            .collect();
        snap_positions(&mut v);
        v
    }

    pub fn handle_point(&self, target: GraspTarget) -> Result<Vector3<f64>> {
        let obj = self
            .objects
            .get(target.object)
            .ok_or_else(|| Error::Index(format!("object {}", target.object)))?;
        let h = obj
            .handles
            .get(target.handle)
            .ok_or_else(|| Error::Index(format!("handle {} of {}", target.handle, obj.name)))?;
        Ok(obj.pose.transform_point(h))
    }

    pub fn root(&self, mut object: usize) -> usize {
        while let Some(l) = self.links.iter().find(|l| l.child == object) {
            object = l.parent;
        }
        object
    }

    pub fn holders(&self, object: usize) -> Vec<Side> {
        let root = self.root(object);
        self.attachments
            .iter()
            .filter(|a| a.object == root)
            .map(|a| a.side)
            .collect()
    }

    fn midpoint(&self) -> Pose {
        self.grippers[0].interpolate(&self.grippers[1], 0.5)
    }

    /// Moves both arms toward `targets` by IK from the current joints and
    /// carries attached bodies along.
    pub fn step(&self, targets: &[Pose; 2]) -> (WorldState, [IkResult; 2]) {
        let mut next = self.clone();
        let results = std::array::from_fn(|i| {
            ik_solve(&self.arms[i], &IkTarget::Pose(targets[i]), &self.joints[i], &self.ik)
        });
        for i in 0..2 {
            let r: &IkResult = &results[i];
            next.joints[i] = r.joints;
            next.grippers[i] = next.arms[i].forward_unchecked(&r.joints);
        }
        next.carry();
        (next, results)
    }

    fn carry(&mut self) {
        let mid = self.midpoint();
        for &(root, offset) in &self.bimanual {
            self.objects[root].pose = mid.compose(&offset);
        }
        for a in &self.attachments {
            if self.bimanual.iter().any(|(r, _)| *r == a.object) {
                continue;
            }
            self.objects[a.object].pose = self.grippers[a.side.index()].compose(&a.offset);
        }
        for _ in 0..self.links.len() {
            for l in &self.links {
                self.objects[l.child].pose = self.objects[l.parent].pose.compose(&l.offset);
            }
        }
    }

    fn refresh_bimanual(&mut self) {
        let mid = self.midpoint();
        let mut roots: Vec<usize> = self.attachments.iter().map(|a| a.object).collect();
        roots.sort_unstable();
        roots.dedup();
        let kept: Vec<(usize, Pose)> = roots
            .into_iter()
            .filter(|&r| self.attachments.iter().filter(|a| a.object == r).count() == 2)
            .map(|r| {
                let existing = self.bimanual.iter().find(|(b, _)| *b == r).map(|(_, o)| *o);
                (r, existing.unwrap_or_else(|| mid.inverse().compose(&self.objects[r].pose)))
            })
            .collect();
        self.bimanual = kept;
    }

    pub fn apply(&self, directive: &Directive) -> Result<WorldState> {
        let mut next = self.clone();
        match *directive {
            Directive::Grasp { left, right } => {
                let sides = [(Side::Left, left), (Side::Right, right)];
                for (side, target) in sides {
                    let Some(t) = target else { continue };
                    let point = self.handle_point(t)?;
                    let d = (self.gripper(side).position - point).norm();
                    if d > self.grasp_tolerance {
                        return Err(Error::GraspMiss(format!(
                            "{side:?} gripper is {:.3} m from handle {} of {} (tolerance {:.3} m)",
                            d, t.handle, self.objects[t.object].name, self.grasp_tolerance
                        )));
                    }
                }
                next.bimanual.clear();
                for (side, target) in sides {
                    let Some(t) = target else { continue };
                    next.attachments.retain(|a| a.side != side);
                    let root = next.root(t.object);
                    let offset = next.grippers[side.index()]
                        .inverse()
                        .compose(&next.objects[root].pose);
                    next.attachments.push(Attachment {
                        side,
                        object: root,
                        offset,
                    });
                }
                next.refresh_bimanual();
            }
            Directive::Release { left, right } => {
                next.attachments.retain(|a| match a.side {
                    Side::Left => !left,
                    Side::Right => !right,
                });
                next.refresh_bimanual();
            }
            Directive::Join {
                child,
                parent,
                child_point,
                parent_point,
                tolerance,
            } => {
                let n = self.objects.len();
                if child >= n || parent >= n || child == parent {
                    return Err(Error::Index(format!("join {child} to {parent} of {n} objects")));
                }
                let pc = self.objects[child].pose.transform_point(&child_point);
                let pp = self.objects[parent].pose.transform_point(&parent_point);
                let gap = (pc - pp).norm();
                if gap > tolerance {
                    return Err(Error::GraspMiss(format!(
                        "join of {} into {} misaligned by {:.3} m (tolerance {:.3} m)",
                        self.objects[child].name, self.objects[parent].name, gap, tolerance
                    )));
                }
                let root = next.root(parent);
                let offset = next.objects[parent]
                    .pose
                    .inverse()
                    .compose(&next.objects[child].pose);
                next.links.push(Link {
                    child,
                    parent,
                    offset,
                });
                let old_root = child;
                for a in next.attachments.iter_mut().filter(|a| a.object == old_root) {
                    a.object = root;
                    a.offset = next.grippers[a.side.index()]
                        .inverse()
                        .compose(&next.objects[root].pose);
                }
                next.bimanual.retain(|(r, _)| *r != old_root);
                next.refresh_bimanual();
            }
        }
        Ok(next)
    }

    /// IK step followed by each directive in order; the attachment
    /// invariant is verified on the result.
    pub fn step_world(
        &self,
        targets: &[Pose; 2],
        directives: &[Directive],
    ) -> Result<(WorldState, [IkResult; 2])> {
        let (mut next, ik) = self.step(targets);
        for d in directives {
            next = next.apply(d)?;
        }
        next.check_consistency()?;
        Ok((next, ik))
    }

    /// Verifies every attached or linked body sits exactly where its
    /// holder and stored offset put it.
    pub fn check_consistency(&self) -> Result<()> {
        let close = |a: &Pose, b: &Pose| {
            (a.position - b.position).norm() < CONSISTENCY_TOL
                && (a.orientation.quaternion() - b.orientation.quaternion()).norm() < CONSISTENCY_TOL
        };
        let mid = self.midpoint();
        for a in &self.attachments {
            let expected = match self.bimanual.iter().find(|(r, _)| *r == a.object) {
                Some((_, off)) => mid.compose(off),
                None => self.grippers[a.side.index()].compose(&a.offset),
            };
            if !close(&expected, &self.objects[a.object].pose) {
                return Err(Error::Contract(format!(
                    "{} drifted from its {:?} attachment",
                    self.objects[a.object].name, a.side
                )));
            }
        }
        for l in &self.links {
            let expected = self.objects[l.parent].pose.compose(&l.offset);
            if !close(&expected, &self.objects[l.child].pose) {
                return Err(Error::Contract(format!(
                    "{} drifted from its link to {}",
                    self.objects[l.child].name, self.objects[l.parent].name
                )));
            }
        }
        Ok(())
    }
}
