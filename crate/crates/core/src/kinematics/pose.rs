use nalgebra::{Quaternion, UnitQuaternion, Vector3};

use crate::error::{Error, Result};

/// Rigid transform: position in meters and a unit quaternion.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub position: Vector3<f64>,
    pub orientation: UnitQuaternion<f64>,
}

/// Normalizes `q`, failing on a zero (or non-finite) norm.
pub fn quat_normalize(q: Quaternion<f64>) -> Result<UnitQuaternion<f64>> {
    let n = q.norm();
    if n == 0.0 || !n.is_finite() {
        return Err(Error::ZeroNorm);
    }
    Ok(UnitQuaternion::new_unchecked(q / n))
}

/// Hamilton product, renormalized so repeated composition does not drift.
pub fn quat_multiply(a: &UnitQuaternion<f64>, b: &UnitQuaternion<f64>) -> UnitQuaternion<f64> {
    let q = a.quaternion() * b.quaternion();
    UnitQuaternion::new_unchecked(q / q.norm())
}

pub fn rotate_vector(q: &UnitQuaternion<f64>, v: &Vector3<f64>) -> Vector3<f64> {
    q * v
}

/// `2·arccos(min(1, |a·b|))`, in `[0, π]`; sign-invariant.
pub fn geodesic_distance(a: &UnitQuaternion<f64>, b: &UnitQuaternion<f64>) -> f64 {
    let (p, q) = (a.quaternion().coords, b.quaternion().coords);
    let q = if p.dot(&q) < 0.0 { -q } else { q };
    4.0 * (p - q).norm().atan2((p + q).norm())
}

impl Pose {
    pub fn new(position: Vector3<f64>, orientation: UnitQuaternion<f64>) -> Self {
        Self {
            position,
            orientation,
        }
    }

    pub fn identity() -> Self {
        Self::new(Vector3::zeros(), UnitQuaternion::identity())
    }

    pub fn from_position(position: Vector3<f64>) -> Self {
        Self::new(position, UnitQuaternion::identity())
    }

    /// `self ∘ other`: `other` expressed in this frame.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            position: self.position + self.orientation * other.position,
            orientation: quat_multiply(&self.orientation, &other.orientation),
        }
    }

    pub fn inverse(&self) -> Pose {
        let inv = self.orientation.inverse();
        Pose {
            position: -(inv * self.position),
            orientation: inv,
        }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.position + self.orientation * p
    }

    /// `[x, y, z, qw, qx, qy, qz]`.
    pub fn to_block(&self) -> [f64; 7] {
        let q = self.orientation.quaternion();
        [
            self.position.x,
            self.position.y,
            self.position.z,
            q.w,
            q.i,
            q.j,
            q.k,
        ]
    }

    /// Parses a 7-value block, normalizing the quaternion.
    pub fn from_block(b: &[f64]) -> Result<Pose> {
        if b.len() != 7 {
            return Err(Error::Dimension(format!("pose block of {} values", b.len())));
        }
        let q = quat_normalize(Quaternion::new(b[3], b[4], b[5], b[6]))?;
        Ok(Pose::new(Vector3::new(b[0], b[1], b[2]), q))
    }

    /// Position average and quaternion nlerp at `t`, taking the short arc.
    pub fn interpolate(&self, other: &Pose, t: f64) -> Pose {
        let a = self.orientation.quaternion();
        let mut b = *other.orientation.quaternion();
        if a.dot(&b) < 0.0 {
            b = -b;
        }
        let q = a * (1.0 - t) + b * t;
        Pose {
            position: self.position * (1.0 - t) + other.position * t,
            orientation: UnitQuaternion::new_unchecked(q / q.norm()),
        }
    }
}
