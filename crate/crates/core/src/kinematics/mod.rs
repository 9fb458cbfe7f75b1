//! Kinematic two-arm world: pose algebra, 7-joint arms, damped least
//! squares IK, grasp attachment and task success predicates.

mod arm;
mod ik;
mod pose;
mod success;
mod world;

pub use arm::{ArmGeometry, ArmModel, Axis, Joint};
pub use ik::{ik_solve, IkConfig, IkResult, IkTarget};
pub use pose::{geodesic_distance, quat_multiply, quat_normalize, rotate_vector, Pose};
pub use success::{peg_in_hole_success, table_lift_success, tilt_deg, PegThresholds, TableThresholds};
pub use world::{
    snap_position, snap_positions, Attachment, Directive, GraspTarget, Link, Object, Side, WorldState,
    POSITION_QUANTUM,
};

pub use nalgebra::{Quaternion, UnitQuaternion, Vector3};
