//! Hybrid visual-inertial energy over a fragment of consecutive frames.
//!
//! The decision vector is the flattened `N × J × 3` block of joint positions
//! (mm). Finite differences are scaled by the frame rate so that they carry
//! the units of the IMU signals they are compared against: second
//! differences in mm/s², third differences in mm/s³. Frames whose stencil
//! would leave the fragment contribute no inertial residual.

use nalgebra::{Matrix3x4, Vector4};
use serde::{Deserialize, Serialize};

use crate::camera::{Pixel, MIN_DEPTH};
use crate::error::{Error, Result};
use crate::rotmath::Vec3;
use crate::skeleton::Pose;

/// Lower clamp applied to every normalization scale.
pub const MIN_SCALE: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct Fragment {
    /// Row-major `[frame][joint][xyz]`.
    pub positions: Vec<f64>,
    pub frames: usize,
    pub joints: usize,
    pub fps: f64,
    /// Index of the first frame in the (padded) source sequence.
    pub start: usize,
}

impl Fragment {
    pub fn from_poses(poses: &[Pose], fps: f64, start: usize) -> Result<Self> {
        let joints = poses.first().map_or(0, Pose::len);
        if poses.len() < 3 {
            return Err(Error::TooShort {
                needed: 3,
                got: poses.len(),
            });
        }
        let mut positions = Vec::with_capacity(poses.len() * joints * 3);
        for p in poses {
            if p.len() != joints {
                return Err(Error::TopologyMismatch {
                    expected: joints,
                    got: p.len(),
                });
            }
            for x in &p.positions {
                if !x.iter().all(|c| c.is_finite()) {
                    return Err(Error::InvalidConfig("non-finite joint position".into()));
                }
                positions.extend_from_slice(x.as_slice());
            }
        }
        Ok(Self {
            positions,
            frames: poses.len(),
            joints,
            fps,
            start,
        })
    }

    pub fn point(&self, frame: usize, joint: usize) -> Vec3 {
        let o = (frame * self.joints + joint) * 3;
        Vec3::new(
            self.positions[o],
            self.positions[o + 1],
            self.positions[o + 2],
        )
    }

    pub fn to_poses(&self) -> Vec<Pose> {
        (0..self.frames)
            .map(|i| Pose::new((0..self.joints).map(|j| self.point(i, j)).collect()))
            .collect()
    }

    pub fn with_positions(&self, positions: Vec<f64>) -> Self {
        assert_eq!(positions.len(), self.positions.len());
        Self {
            positions,
            ..self.clone()
        }
    }

    pub fn dim(&self) -> usize {
        self.positions.len()
    }
}

/// A sensor's bound joint and that joint's parent.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SensorBinding {
    pub joint: usize,
    pub parent: usize,
}

/// Observations aligned with a fragment. Empty `keypoints` disables the
/// visual term; empty `sensors` disables the inertial terms.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Observations {
    pub projection: Option<Matrix3x4<f64>>,
    /// `[frame][joint]`, `None` for occluded joints.
    pub keypoints: Vec<Vec<Option<Pixel>>>,
    pub sensors: Vec<SensorBinding>,
    /// Gravity-free global accelerations, `[frame][sensor]`, mm/s².
    pub accelerations: Vec<Vec<Option<Vec3>>>,
    /// IMU bone vectors, `[frame][sensor]`, mm.
    pub bones: Vec<Vec<Option<Vec3>>>,
}

impl Observations {
    fn check(&self, frag: &Fragment) -> Result<()> {
        let mismatch = |what: &str, got: usize| {
            Err(Error::LengthMismatch(format!(
                "{what} covers {got} frames, fragment has {}",
                frag.frames
            )))
        };
        if !self.keypoints.is_empty() && self.keypoints.len() != frag.frames {
            return mismatch("keypoints", self.keypoints.len());
        }
        if !self.sensors.is_empty() {
            if self.accelerations.len() != frag.frames {
                return mismatch("accelerations", self.accelerations.len());
            }
            if self.bones.len() != frag.frames {
                return mismatch("bone vectors", self.bones.len());
            }
        }
        if self
            .sensors
            .iter()
            .any(|s| s.joint >= frag.joints || s.parent >= frag.joints)
        {
            return Err(Error::UnboundJoint(frag.joints));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnergyConfig {
    pub k_v: f64,
    pub k_i: f64,
    pub k_a: f64,
    pub k_b: f64,
    pub k_s: f64,
    /// IGIK replacement threshold, radians.
    pub theta_t: f64,
    /// Fragment length in frames.
    pub fragment_len: usize,
}

impl Default for EnergyConfig {
    fn default() -> Self {
        Self {
            k_v: 0.9,
            k_i: 0.1,
            k_a: 0.5,
            k_b: 0.2,
            k_s: 0.3,
            theta_t: 15f64.to_radians(),
            fragment_len: 50,
        }
    }
}

impl EnergyConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, w) in [
            ("k_v", self.k_v),
            ("k_i", self.k_i),
            ("k_a", self.k_a),
            ("k_b", self.k_b),
            ("k_s", self.k_s),
            ("theta_t", self.theta_t),
        ] {
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be finite and >= 0, got {w}"
                )));
            }
        }
        if self.fragment_len < 4 || !self.fragment_len.is_multiple_of(2) {
            return Err(Error::InvalidN(self.fragment_len));
        }
        Ok(())
    }

    /// Same weights with the inertial term switched off.
    pub fn visual_only(&self) -> Self {
        Self {
            k_i: 0.0,
            ..self.clone()
        }
    }
}

/// Value and gradient of one energy term.
#[derive(Clone, Debug, PartialEq)]
pub struct TermEval {
    pub value: f64,
    pub gradient: Vec<f64>,
    /// Residuals dropped because the point was behind the camera.
    pub skipped: usize,
}

fn add3(grad: &mut [f64], frame: usize, joint: usize, joints: usize, v: Vec3) {
    let o = (frame * joints + joint) * 3;
    grad[o] += v.x;
    grad[o + 1] += v.y;
    grad[o + 2] += v.z;
}

fn at(x: &[f64], frame: usize, joint: usize, joints: usize) -> Vec3 {
    let o = (frame * joints + joint) * 3;
    Vec3::new(x[o], x[o + 1], x[o + 2])
}

// Each accumulator adds `weight * ∇E` into `grad` (when given) and returns E.

fn visual_term(
    x: &[f64],
    shape: (usize, usize),
    obs: &Observations,
    weight: f64,
    mut grad: Option<&mut [f64]>,
) -> (f64, usize) {
    let (frames, joints) = shape;
    let Some(pm) = obs.projection.as_ref() else {
        return (0.0, 0);
    };
    if obs.keypoints.is_empty() {
        return (0.0, 0);
    }
    let row = |r: usize| Vector4::new(pm[(r, 0)], pm[(r, 1)], pm[(r, 2)], pm[(r, 3)]);
    let (p0, p1, p2) = (row(0), row(1), row(2));
    let mut energy = 0.0;
    let mut skipped = 0;
    for i in 0..frames {
        for (j, kp) in obs.keypoints[i].iter().enumerate().take(joints) {
            let Some(kp) = kp else { continue };
            let xh = at(x, i, j, joints).push(1.0);
            let w = p2.dot(&xh);
            if !(w > MIN_DEPTH) {
                skipped += 1;
                continue;
            }
            let u = p0.dot(&xh) / w;
            let v = p1.dot(&xh) / w;
            let (ru, rv) = (u - kp.x, v - kp.y);
            energy += ru * ru + rv * rv;
            if let Some(g) = grad.as_deref_mut() {
                let du = (p0 - p2 * u).xyz() / w;
                let dv = (p1 - p2 * v).xyz() / w;
                add3(g, i, j, joints, (du * ru + dv * rv) * (2.0 * weight));
            }
        }
    }
    (energy, skipped)
}

fn second_difference(x: &[f64], i: usize, j: usize, joints: usize, fps: f64) -> Vec3 {
    (at(x, i + 1, j, joints) - at(x, i, j, joints) * 2.0 + at(x, i - 1, j, joints)) * (fps * fps)
}

fn accel_term(
    x: &[f64],
    shape: (usize, usize),
    fps: f64,
    obs: &Observations,
    weight: f64,
    mut grad: Option<&mut [f64]>,
) -> f64 {
    let (frames, joints) = shape;
    let f2 = fps * fps;
    let mut energy = 0.0;
    for i in 1..frames.saturating_sub(1) {
        for (k, s) in obs.sensors.iter().enumerate() {
            let Some(a_imu) = obs.accelerations[i][k] else {
                continue;
            };
            let r = second_difference(x, i, s.joint, joints, fps) - a_imu;
            energy += r.norm_squared();
            if let Some(g) = grad.as_deref_mut() {
                let c = r * (2.0 * weight * f2);
                add3(g, i + 1, s.joint, joints, c);
                add3(g, i, s.joint, joints, c * -2.0);
                add3(g, i - 1, s.joint, joints, c);
            }
        }
    }
    energy
}

fn bone_term(
    x: &[f64],
    shape: (usize, usize),
    obs: &Observations,
    weight: f64,
    mut grad: Option<&mut [f64]>,
) -> f64 {
    let (frames, joints) = shape;
    let mut energy = 0.0;
    for i in 0..frames {
        for (k, s) in obs.sensors.iter().enumerate() {
            let Some(b_imu) = obs.bones[i][k] else {
                continue;
            };
            let r = at(x, i, s.joint, joints) - at(x, i, s.parent, joints) - b_imu;
            energy += r.norm_squared();
            if let Some(g) = grad.as_deref_mut() {
                let c = r * (2.0 * weight);
                add3(g, i, s.joint, joints, c);
                add3(g, i, s.parent, joints, -c);
            }
        }
    }
    energy
}

fn smooth_term(
    x: &[f64],
    shape: (usize, usize),
    fps: f64,
    obs: &Observations,
    weight: f64,
    mut grad: Option<&mut [f64]>,
) -> f64 {
    let (frames, joints) = shape;
    let f3 = fps * fps * fps;
    let mut energy = 0.0;
    // S_i = (A_{i+1} - A_i) fps, defined when both accelerations are interior.
    for i in 1..frames.saturating_sub(2) {
        for (k, s) in obs.sensors.iter().enumerate() {
            let (Some(a0), Some(a1)) = (obs.accelerations[i][k], obs.accelerations[i + 1][k])
            else {
                continue;
            };
            let j = s.joint;
            let s_frag = (at(x, i + 2, j, joints) - at(x, i + 1, j, joints) * 3.0
                + at(x, i, j, joints) * 3.0
                - at(x, i - 1, j, joints))
                * f3;
            let r = s_frag - (a1 - a0) * fps;
            energy += r.norm_squared();
            if let Some(g) = grad.as_deref_mut() {
                let c = r * (2.0 * weight * f3);
                add3(g, i + 2, j, joints, c);
                add3(g, i + 1, j, joints, c * -3.0);
                add3(g, i, j, joints, c * 3.0);
                add3(g, i - 1, j, joints, -c);
            }
        }
    }
    energy
}

fn eval_term<F>(frag: &Fragment, obs: &Observations, min_frames: usize, f: F) -> Result<TermEval>
where
    F: FnOnce(&[f64], &mut [f64]) -> (f64, usize),
{
    if frag.frames < min_frames {
        return Err(Error::TooShort {
            needed: min_frames,
            got: frag.frames,
        });
    }
    obs.check(frag)?;
    let mut gradient = vec![0.0; frag.dim()];
    let (value, skipped) = f(&frag.positions, &mut gradient);
    Ok(TermEval {
        value,
        gradient,
        skipped,
    })
}

/// Squared reprojection error in pixels, summed over observed joints.
pub fn visual_energy(frag: &Fragment, obs: &Observations) -> Result<TermEval> {
    eval_term(frag, obs, 1, |x, g| {
        visual_term(x, (frag.frames, frag.joints), obs, 1.0, Some(g))
    })
}

/// Squared mismatch between fragment and IMU accelerations at interior frames.
pub fn acceleration_energy(frag: &Fragment, obs: &Observations) -> Result<TermEval> {
    eval_term(frag, obs, 3, |x, g| {
        (
            accel_term(x, (frag.frames, frag.joints), frag.fps, obs, 1.0, Some(g)),
            0,
        )
    })
}

/// Squared mismatch between fragment bones and IMU bone vectors.
pub fn bone_energy(frag: &Fragment, obs: &Observations) -> Result<TermEval> {
    eval_term(frag, obs, 1, |x, g| {
        (
            bone_term(x, (frag.frames, frag.joints), obs, 1.0, Some(g)),
            0,
        )
    })
}

/// Squared mismatch between fragment jerk and the IMU acceleration rate.
pub fn smooth_energy(frag: &Fragment, obs: &Observations) -> Result<TermEval> {
    eval_term(frag, obs, 4, |x, g| {
        (
            smooth_term(x, (frag.frames, frag.joints), frag.fps, obs, 1.0, Some(g)),
            0,
        )
    })
}

/// Per-term normalization scales; each is the term's value at the initial
/// point of the fragment, clamped below at [`MIN_SCALE`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnergyScales {
    pub visual: f64,
    pub accel: f64,
    pub bone: f64,
    pub smooth: f64,
}

impl EnergyScales {
    pub fn at(frag: &Fragment, obs: &Observations) -> Result<Self> {
        if frag.frames < 4 {
            return Err(Error::TooShort {
                needed: 4,
                got: frag.frames,
            });
        }
        obs.check(frag)?;
        let x = &frag.positions;
        let shape = (frag.frames, frag.joints);
        Ok(Self {
            visual: visual_term(x, shape, obs, 1.0, None).0.max(MIN_SCALE),
            accel: accel_term(x, shape, frag.fps, obs, 1.0, None).max(MIN_SCALE),
            bone: bone_term(x, shape, obs, 1.0, None).max(MIN_SCALE),
            smooth: smooth_term(x, shape, frag.fps, obs, 1.0, None).max(MIN_SCALE),
        })
    }
}

/// The weighted, normalized objective optimized for one fragment.
#[derive(Clone, Debug)]
pub struct HybridEnergy<'a> {
    obs: &'a Observations,
    cfg: EnergyConfig,
    scales: EnergyScales,
    frames: usize,
    joints: usize,
    fps: f64,
}

impl<'a> HybridEnergy<'a> {
    /// Normalizes against `initial`.
    pub fn new(initial: &Fragment, obs: &'a Observations, cfg: &EnergyConfig) -> Result<Self> {
        let scales = EnergyScales::at(initial, obs)?;
        Self::with_scales(initial, obs, cfg, scales)
    }

    pub fn with_scales(
        frag: &Fragment,
        obs: &'a Observations,
        cfg: &EnergyConfig,
        scales: EnergyScales,
    ) -> Result<Self> {
        obs.check(frag)?;
        Ok(Self {
            obs,
            cfg: cfg.clone(),
            scales,
            frames: frag.frames,
            joints: frag.joints,
            fps: frag.fps,
        })
    }

    pub fn scales(&self) -> EnergyScales {
        self.scales
    }

    /// Energy at `x`; the weighted gradient is written into `grad`
    /// (overwritten) when given.
    pub fn evaluate(&self, x: &[f64], mut grad: Option<&mut [f64]>) -> (f64, usize) {
        if let Some(g) = grad.as_deref_mut() {
            g.fill(0.0);
        }
        let shape = (self.frames, self.joints);
        let c = &self.cfg;
        let s = &self.scales;
        let mut total = 0.0;
        let mut skipped = 0;
        if c.k_v > 0.0 {
            let w = c.k_v / s.visual;
            let (e, sk) = visual_term(x, shape, self.obs, w, grad.as_deref_mut());
            total += w * e;
            skipped += sk;
        }
        if c.k_i > 0.0 && !self.obs.sensors.is_empty() {
            if c.k_a > 0.0 {
                let w = c.k_i * c.k_a / s.accel;
                total += w * accel_term(x, shape, self.fps, self.obs, w, grad.as_deref_mut());
            }
            if c.k_b > 0.0 {
                let w = c.k_i * c.k_b / s.bone;
                total += w * bone_term(x, shape, self.obs, w, grad.as_deref_mut());
            }
            if c.k_s > 0.0 {
                let w = c.k_i * c.k_s / s.smooth;
                total += w * smooth_term(x, shape, self.fps, self.obs, w, grad.as_deref_mut());
            }
        }
        (total, skipped)
    }
}

/// `k_V E_V/s_V + k_I (k_A E_A/s_A + k_B E_B/s_B + k_S E_S/s_S)` with its gradient.
pub fn total_energy(
    frag: &Fragment,
    obs: &Observations,
    cfg: &EnergyConfig,
    scales: &EnergyScales,
) -> Result<TermEval> {
    if frag.frames < 4 {
        return Err(Error::TooShort {
            needed: 4,
            got: frag.frames,
        });
    }
    let energy = HybridEnergy::with_scales(frag, obs, cfg, *scales)?;
    let mut gradient = vec![0.0; frag.dim()];
    let (value, skipped) = energy.evaluate(&frag.positions, Some(&mut gradient));
    Ok(TermEval {
        value,
        gradient,
        skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::Camera;

    fn line_fragment(frames: usize, velocity: Vec3, accel: Vec3) -> Fragment {
        let fps = 25.0;
        let poses: Vec<Pose> = (0..frames)
            .map(|i| {
                let t = i as f64 / fps;
                let base = Vec3::new(0.0, 1000.0, 0.0) + velocity * t + accel * (0.5 * t * t);
                Pose::new(vec![base, base + Vec3::new(0.0, 300.0, 0.0)])
            })
            .collect();
        Fragment::from_poses(&poses, fps, 0).unwrap()
    }

    fn inertial_obs(frames: usize, accel: Vec3, bone: Vec3) -> Observations {
        Observations {
            sensors: vec![SensorBinding {
                joint: 1,
                parent: 0,
            }],
            accelerations: vec![vec![Some(accel)]; frames],
            bones: vec![vec![Some(bone)]; frames],
            ..Default::default()
        }
    }

    #[test]
    fn linear_motion_has_no_acceleration_energy() {
        let frag = line_fragment(6, Vec3::new(100.0, -20.0, 5.0), Vec3::zeros());
        let obs = inertial_obs(6, Vec3::zeros(), Vec3::new(0.0, 300.0, 0.0));
        assert!(acceleration_energy(&frag, &obs).unwrap().value < 1e-12);
        assert!(bone_energy(&frag, &obs).unwrap().value < 1e-18);
        assert!(smooth_energy(&frag, &obs).unwrap().value < 1e-12);
    }

    #[test]
    fn constant_acceleration_matches() {
        let a = Vec3::new(500.0, 250.0, -120.0);
        let frag = line_fragment(7, Vec3::new(10.0, 0.0, 0.0), a);
        let obs = inertial_obs(7, a, Vec3::new(0.0, 300.0, 0.0));
        assert!(acceleration_energy(&frag, &obs).unwrap().value < 1e-9);
        assert!(smooth_energy(&frag, &obs).unwrap().value < 1e-9);
    }

    #[test]
    fn single_bone_offset() {
        let frag = line_fragment(5, Vec3::zeros(), Vec3::zeros());
        let mut obs = inertial_obs(5, Vec3::zeros(), Vec3::new(0.0, 300.0, 0.0));
        let d = Vec3::new(3.0, -4.0, 12.0);
        obs.bones[2][0] = Some(Vec3::new(0.0, 300.0, 0.0) - d);
        assert!((bone_energy(&frag, &obs).unwrap().value - d.norm_squared()).abs() < 1e-9);
    }

    #[test]
    fn smooth_needs_four_frames() {
        let frag = line_fragment(3, Vec3::zeros(), Vec3::zeros());
        let obs = inertial_obs(3, Vec3::zeros(), Vec3::zeros());
        assert!(matches!(
            smooth_energy(&frag, &obs),
            Err(Error::TooShort { needed: 4, .. })
        ));
        assert!(acceleration_energy(&frag, &obs).is_ok());
    }

    #[test]
    fn visual_unit_depth_offset() {
        // Camera at the origin looking down +z with unit focal length.
        let cam = Camera::look_at(Vec3::zeros(), Vec3::z(), -Vec3::y(), 1.0, 0.0, 0.0).unwrap();
        let truth = Vec3::new(0.0, 0.0, 1.0);
        let delta = Vec3::new(0.3, -0.4, 0.0);
        let poses = vec![Pose::new(vec![truth]); 4];
        let mut frag = Fragment::from_poses(&poses, 25.0, 0).unwrap();
        let obs = Observations {
            projection: Some(cam.projection_matrix()),
            keypoints: vec![vec![cam.project(&truth)]; 4],
            ..Default::default()
        };
        assert!(visual_energy(&frag, &obs).unwrap().value < 1e-24);
        frag.positions[0] += delta.x;
        frag.positions[1] += delta.y;
        let e = visual_energy(&frag, &obs).unwrap().value;
        assert!((e - delta.norm_squared()).abs() < 1e-12);
    }

    #[test]
    fn behind_camera_counted() {
        let cam = Camera::default_rig();
        let p = Vec3::new(0.0, 1000.0, 0.0);
        let mut poses = vec![Pose::new(vec![p]); 4];
        poses[2].positions[0].z = 6000.0;
        let frag = Fragment::from_poses(&poses, 25.0, 0).unwrap();
        let obs = Observations {
            projection: Some(cam.projection_matrix()),
            keypoints: vec![vec![cam.project(&p)]; 4],
            ..Default::default()
        };
        let e = visual_energy(&frag, &obs).unwrap();
        assert_eq!(e.skipped, 1);
        assert!(e.value < 1e-18);
    }

    #[test]
    fn occluded_joints_ignored() {
        let cam = Camera::default_rig();
        let poses = vec![Pose::new(vec![Vec3::new(0.0, 1000.0, 0.0)]); 4];
        let frag = Fragment::from_poses(&poses, 25.0, 0).unwrap();
        let obs = Observations {
            projection: Some(cam.projection_matrix()),
            keypoints: vec![vec![None]; 4],
            ..Default::default()
        };
        assert_eq!(visual_energy(&frag, &obs).unwrap().value, 0.0);
    }

    #[test]
    fn observation_shape_checked() {
        let frag = line_fragment(5, Vec3::zeros(), Vec3::zeros());
        let obs = inertial_obs(4, Vec3::zeros(), Vec3::zeros());
        assert!(matches!(
            bone_energy(&frag, &obs),
            Err(Error::LengthMismatch(_))
        ));
    }

    #[test]
    fn config_validation() {
        assert!(EnergyConfig::default().validate().is_ok());
        let bad_n = EnergyConfig {
            fragment_len: 7,
            ..Default::default()
        };
        assert!(matches!(bad_n.validate(), Err(Error::InvalidN(7))));
        let neg = EnergyConfig {
            k_b: -0.1,
            ..Default::default()
        };
        assert!(neg.validate().is_err());
    }
}
