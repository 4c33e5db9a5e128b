//! Pinhole camera. Camera frame follows the usual vision convention: x right,
//! y down, z forward; pixels are measured from the top-left corner.

use nalgebra::{Matrix3, Matrix3x4, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rotmath::{Rotation, Vec3};

/// Minimum depth (mm) in front of the camera for a valid projection.
pub const MIN_DEPTH: f64 = 1e-6;

pub type Pixel = Vector2<f64>;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// World to camera rotation.
    pub rotation: Rotation,
    /// World to camera translation, mm.
    pub translation: Vec3,
}

impl Camera {
    /// Camera at `eye` looking at `target` with `up` as the world up direction.
    pub fn look_at(
        eye: Vec3,
        target: Vec3,
        up: Vec3,
        focal: f64,
        cx: f64,
        cy: f64,
    ) -> Result<Self> {
        let z = (target - eye)
            .try_normalize(1e-12)
            .ok_or(Error::ZeroVector)?;
        let y = -(up - z * up.dot(&z))
            .try_normalize(1e-12)
            .ok_or(Error::ZeroVector)?;
        let x = y.cross(&z);
        let m = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
        let rotation = Rotation::from_matrix(&m)?;
        let translation = -rotation.rotate(&eye);
        Ok(Self {
            fx: focal,
            fy: focal,
            cx,
            cy,
            rotation,
            translation,
        })
    }

    /// Default rig camera: 4 m in front of a subject standing at the origin.
    pub fn default_rig() -> Self {
        Self::look_at(
            Vec3::new(0.0, 1000.0, 4000.0),
            Vec3::new(0.0, 1000.0, 0.0),
            Vec3::y(),
            1000.0,
            640.0,
            360.0,
        )
        .expect("default camera is valid")
    }

    pub fn intrinsics(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    /// The 3×4 matrix `K [R | t]`.
    pub fn projection_matrix(&self) -> Matrix3x4<f64> {
        let mut rt = Matrix3x4::zeros();
        rt.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(&self.rotation.to_matrix());
        rt.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        self.intrinsics() * rt
    }

    /// Optical center in world coordinates.
    pub fn center(&self) -> Vec3 {
        -self.rotation.inverse().rotate(&self.translation)
    }

    pub fn to_camera(&self, p: &Vec3) -> Vec3 {
        self.rotation.rotate(p) + self.translation
    }

    /// Projects a world point; `None` if it is not in front of the camera.
    pub fn project(&self, p: &Vec3) -> Option<Pixel> {
        let c = self.to_camera(p);
        if !(c.z > MIN_DEPTH) {
            return None;
        }
        Some(Pixel::new(
            self.fx * c.x / c.z + self.cx,
            self.fy * c.y / c.z + self.cy,
        ))
    }

    /// Unit direction of the viewing ray through `p`.
    pub fn ray(&self, p: &Vec3) -> Vec3 {
        (p - self.center()).normalize()
    }
}

/// Pixel observations per frame and joint; `None` marks an occluded joint.
#[derive(Clone, Debug, PartialEq)]
pub struct KeypointSequence {
    pub fps: f64,
    pub frames: Vec<Vec<Option<Pixel>>>,
}

impl KeypointSequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}
