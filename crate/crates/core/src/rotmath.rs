//! Rotation algebra used throughout the kinematic and inertial code.
//!
//! [`Rotation`] wraps a unit quaternion whose sign is canonicalized so that
//! `w >= 0`. Vectors are plain `nalgebra` 3-vectors; positions and bone
//! vectors are in millimeters, accelerations in mm/s².

use nalgebra::{Matrix3, Quaternion, Unit, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// Inputs with a norm at or below this value are rejected as zero vectors.
pub const ZERO_VECTOR_EPS: f64 = 1e-9;

// Below this cross-product norm (with a negative dot product) the inputs of
// `solve_rotation` are treated as antiparallel.
const ANTIPARALLEL_EPS: f64 = 1e-8;

/// A 3D rotation stored as a canonical unit quaternion.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "[f64; 4]", try_from = "[f64; 4]")]
pub struct Rotation(UnitQuaternion<f64>);

impl Default for Rotation {
    fn default() -> Self {
        Self::identity()
    }
}

impl Rotation {
    pub fn identity() -> Self {
        Rotation(UnitQuaternion::identity())
    }

    fn canonical(q: UnitQuaternion<f64>) -> Self {
        // Renormalize to keep drift from accumulating over long FK chains.
        let q = q.into_inner();
        let n = q.norm();
        let mut q = Quaternion::new(q.w / n, q.i / n, q.j / n, q.k / n);
        let flip = if q.w != 0.0 {
            q.w < 0.0
        } else if q.i != 0.0 {
            q.i < 0.0
        } else if q.j != 0.0 {
            q.j < 0.0
        } else {
            q.k < 0.0
        };
        if flip {
            q = -q;
        }
        Rotation(Unit::new_unchecked(q))
    }

    /// Builds a rotation from quaternion components. The input is normalized;
    /// a zero quaternion is rejected.
    pub fn from_wxyz(w: f64, x: f64, y: f64, z: f64) -> Result<Self> {
        let n = (w * w + x * x + y * y + z * z).sqrt();
        if !n.is_finite() || n <= ZERO_VECTOR_EPS {
            return Err(Error::InvalidRotation(format!(
                "quaternion ({w}, {x}, {y}, {z}) cannot be normalized"
            )));
        }
        Ok(Self::canonical(Unit::new_unchecked(Quaternion::new(
            w / n,
            x / n,
            y / n,
            z / n,
        ))))
    }

    /// Rotation of `angle` radians about `axis` (need not be normalized).
    pub fn from_axis_angle(axis: &Vec3, angle: f64) -> Self {
        let n = axis.norm();
        if n <= ZERO_VECTOR_EPS || angle == 0.0 {
            return Self::identity();
        }
        let a = Unit::new_unchecked(axis / n);
        Self::canonical(UnitQuaternion::from_axis_angle(&a, angle))
    }

    /// Rotation vector (axis scaled by angle).
    pub fn from_scaled_axis(v: &Vec3) -> Self {
        Self::canonical(UnitQuaternion::from_scaled_axis(*v))
    }

    /// Rejects matrices that are not proper rotations (tolerance 1e-6).
    pub fn from_matrix(m: &Matrix3<f64>) -> Result<Self> {
        let ortho = (m.transpose() * m - Matrix3::identity()).abs().max();
        if ortho > 1e-6 || (m.determinant() - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidRotation(
                "matrix is not a proper rotation".into(),
            ));
        }
        let r = nalgebra::Rotation3::from_matrix_unchecked(*m);
        Ok(Self::canonical(UnitQuaternion::from_rotation_matrix(&r)))
    }

    pub fn to_matrix(&self) -> Matrix3<f64> {
        self.0.to_rotation_matrix().into_inner()
    }

    /// Components as `[w, x, y, z]`.
    pub fn wxyz(&self) -> [f64; 4] {
        let q = self.0.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    pub fn quaternion(&self) -> &UnitQuaternion<f64> {
        &self.0
    }

    /// Rotation angle in `[0, π]`.
    pub fn angle(&self) -> f64 {
        self.0.angle()
    }

    /// `self ⊗ other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &Rotation) -> Rotation {
        Self::canonical(self.0 * other.0)
    }

    pub fn inverse(&self) -> Rotation {
        Self::canonical(self.0.inverse())
    }

    pub fn rotate(&self, v: &Vec3) -> Vec3 {
        self.0.transform_vector(v)
    }

    /// Angle of the relative rotation between `self` and `other`.
    pub fn angle_to(&self, other: &Rotation) -> f64 {
        self.0.angle_to(&other.0)
    }
}

impl std::ops::Mul for Rotation {
    type Output = Rotation;
    fn mul(self, rhs: Rotation) -> Rotation {
        self.compose(&rhs)
    }
}

impl From<Rotation> for [f64; 4] {
    fn from(r: Rotation) -> Self {
        r.wxyz()
    }
}

impl TryFrom<[f64; 4]> for Rotation {
    type Error = Error;
    fn try_from(q: [f64; 4]) -> Result<Self> {
        Rotation::from_wxyz(q[0], q[1], q[2], q[3])
    }
}

fn unit(v: &Vec3) -> Result<Vec3> {
    let n = v.norm();
    if !(n > ZERO_VECTOR_EPS) {
        return Err(Error::ZeroVector);
    }
    Ok(v / n)
}

/// Minimal rotation taking the direction of `from` onto the direction of `to`.
///
/// The axis is the normalized cross product, so the result carries no twist
/// about either vector. Antiparallel inputs get a half turn about the part of
/// global +x orthogonal to `from` (falling back to +y).
pub fn solve_rotation(from: &Vec3, to: &Vec3) -> Result<Rotation> {
    let u = unit(from)?;
    let v = unit(to)?;
    let dot = u.dot(&v);
    let cross = u.cross(&v);
    if dot < 0.0 && cross.norm() <= ANTIPARALLEL_EPS {
        let axis = orthogonal_axis(&u);
        return Ok(Rotation::canonical(UnitQuaternion::new_unchecked(
            Quaternion::new(0.0, axis.x, axis.y, axis.z),
        )));
    }
    let q = Quaternion::new(1.0 + dot, cross.x, cross.y, cross.z);
    Ok(Rotation::canonical(UnitQuaternion::new_normalize(q)))
}

fn orthogonal_axis(u: &Vec3) -> Vec3 {
    for reference in [Vec3::x(), Vec3::y()] {
        let ortho = reference - u * u.dot(&reference);
        let n = ortho.norm();
        if n > 1e-3 {
            return ortho / n;
        }
    }
    // u is unit, so it cannot be close to both +x and +y.
    unreachable!("no orthogonal reference axis")
}

/// Unsigned angle between two vectors, in `[0, π]`.
pub fn angle_between(a: &Vec3, b: &Vec3) -> Result<f64> {
    let u = unit(a)?;
    let v = unit(b)?;
    Ok(u.cross(&v).norm().atan2(u.dot(&v)))
}
