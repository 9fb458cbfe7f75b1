use nalgebra::{SMatrix, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use super::pose::Pose;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Y,
    Z,
}

impl Axis {
    fn unit(self) -> Vector3<f64> {
        match self {
            Axis::Y => Vector3::y(),
            Axis::Z => Vector3::z(),
        }
    }
}

/// Revolute joint placed `offset` meters along the previous frame's z.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Joint {
    pub axis: Axis,
    pub offset: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Joint table and tool length, loadable from config.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArmGeometry {
    pub joints: [Joint; 7],
    pub tool: f64,
}

impl Default for ArmGeometry {
    /// z/y alternating axes, 1.0 m from shoulder to tool.
    fn default() -> Self {
        let offsets = [0.0, 0.0, 0.20, 0.20, 0.20, 0.20, 0.10];
        let joints = std::array::from_fn(|i| {
            let (axis, limit) = if i % 2 == 0 { (Axis::Z, ROLL) } else { (Axis::Y, PITCH) };
            Joint {
                axis,
                offset: offsets[i],
                lower: -limit,
                upper: limit,
            }
        });
        Self { joints, tool: 0.10 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ArmModel {
    pub joints: [Joint; 7],
    /// Tool point distance along the last joint's z.
    pub tool: f64,
    pub base: Pose,
}

const ROLL: f64 = 3.05;
const PITCH: f64 = 2.4;

impl ArmModel {
    /// Shipped geometry: z/y alternating axes, 1.0 m from shoulder to tool.
    pub fn standard(base: Pose) -> Self {
        Self::from_geometry(&ArmGeometry::default(), base)
    }

    pub fn from_geometry(geometry: &ArmGeometry, base: Pose) -> Self {
        Self {
            joints: geometry.joints,
            tool: geometry.tool,
            base,
        }
    }

    /// Sum of link offsets: the farthest the tool can be from the shoulder.
    pub fn reach(&self) -> f64 {
        self.joints.iter().skip(1).map(|j| j.offset).sum::<f64>() + self.tool
    }

    /// Shoulder point (first joint origin) in world coordinates.
    pub fn shoulder(&self) -> Vector3<f64> {
        self.base
            .transform_point(&Vector3::new(0.0, 0.0, self.joints[0].offset))
    }

    pub fn check_limits(&self, q: &[f64; 7]) -> Result<()> {
        for (i, (j, &v)) in self.joints.iter().zip(q).enumerate() {
            if !(j.lower..=j.upper).contains(&v) {
                return Err(Error::JointLimit {
                    joint: i,
                    value: v,
                    lower: j.lower,
                    upper: j.upper,
                });
            }
        }
        Ok(())
    }

    pub fn clamp(&self, q: &mut [f64; 7]) {
        for (v, j) in q.iter_mut().zip(&self.joints) {
            *v = v.clamp(j.lower, j.upper);
        }
    }

    pub fn forward(&self, q: &[f64; 7]) -> Result<Pose> {
        self.check_limits(q)?;
        Ok(self.forward_unchecked(q))
    }

    pub fn forward_unchecked(&self, q: &[f64; 7]) -> Pose {
        self.chain(q).2
    }

    /// Joint origins, joint axes (world frame) and the tool pose.
    fn chain(&self, q: &[f64; 7]) -> ([Vector3<f64>; 7], [Vector3<f64>; 7], Pose) {
        let mut frame = self.base;
        let mut origins = [Vector3::zeros(); 7];
        let mut axes = [Vector3::zeros(); 7];
        for (i, (j, &angle)) in self.joints.iter().zip(q).enumerate() {
            frame = frame.compose(&Pose::from_position(Vector3::new(0.0, 0.0, j.offset)));
            origins[i] = frame.position;
            axes[i] = frame.orientation * j.axis.unit();
            let rot = UnitQuaternion::from_scaled_axis(j.axis.unit() * angle);
            frame = frame.compose(&Pose::new(Vector3::zeros(), rot));
        }
        let tool = frame.compose(&Pose::from_position(Vector3::new(0.0, 0.0, self.tool)));
        (origins, axes, tool)
    }

    /// Geometric Jacobian: rows 0–2 linear velocity, rows 3–5 angular.
    pub fn jacobian(&self, q: &[f64; 7]) -> SMatrix<f64, 6, 7> {
        let (origins, axes, tool) = self.chain(q);
        let mut jac = SMatrix::<f64, 6, 7>::zeros();
        for i in 0..7 {
            let lin = axes[i].cross(&(tool.position - origins[i]));
            jac.fixed_view_mut::<3, 1>(0, i).copy_from(&lin);
            jac.fixed_view_mut::<3, 1>(3, i).copy_from(&axes[i]);
        }
        jac
    }
}
