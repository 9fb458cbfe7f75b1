use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::pose::Pose;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableThresholds {
    /// Platform footprint center (x, y) and extents (x, y), meters.
    pub platform_center: [f64; 2],
    pub platform_size: [f64; 2],
    /// Table reference height when resting on the platform.
    pub placed_height: f64,
    pub height_tol: f64,
    pub upright_deg: f64,
}

impl Default for TableThresholds {
    fn default() -> Self {
        Self {
            platform_center: [0.75, 0.0],
            platform_size: [0.50, 1.00],
            placed_height: 0.42,
            height_tol: 0.03,
            upright_deg: 10.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PegThresholds {
    /// Max lateral (xy) peg-to-hole distance.
    pub alignment_tol: f64,
    /// Table reference height when resting on the ground.
    pub resting_height: f64,
    /// Both tables must be at least this far above rest.
    pub min_lift: f64,
    pub evenness_tol: f64,
}

impl Default for PegThresholds {
    fn default() -> Self {
        Self {
            alignment_tol: 0.02,
            resting_height: 0.30,
            min_lift: 0.05,
            evenness_tol: 0.02,
        }
    }
}

/// Angle between the body's up axis and world up, in degrees.
pub fn tilt_deg(pose: &Pose) -> f64 {
    let up = pose.orientation * Vector3::z();
    up.z.clamp(-1.0, 1.0).acos().to_degrees()
}

/// Table center over the platform footprint, at platform height, upright.
pub fn table_lift_success(table: &Pose, t: &TableThresholds) -> bool {
    let p = table.position;
    let inside = (p.x - t.platform_center[0]).abs() <= t.platform_size[0] / 2.0
        && (p.y - t.platform_center[1]).abs() <= t.platform_size[1] / 2.0;
    inside && (p.z - t.placed_height).abs() <= t.height_tol && tilt_deg(table) < t.upright_deg
}

/// Peg (on `peg_table`) laterally aligned with the hole (on `hole_table`),
/// both tables lifted, and lifted evenly.
pub fn peg_in_hole_success(
    hole_table: &Pose,
    hole_local: &Vector3<f64>,
    peg_table: &Pose,
    peg_local: &Vector3<f64>,
    t: &PegThresholds,
) -> bool {
    let hole = hole_table.transform_point(hole_local);
    let peg = peg_table.transform_point(peg_local);
    let lateral = ((hole.x - peg.x).powi(2) + (hole.y - peg.y).powi(2)).sqrt();
    let floor = t.resting_height + t.min_lift;
    lateral <= t.alignment_tol
        && hole_table.position.z >= floor
        && peg_table.position.z >= floor
        && (hole_table.position.z - peg_table.position.z).abs() < t.evenness_tol
}
