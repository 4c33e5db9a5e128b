//! Synthetic motion capture: analytic motion scripts, perfect sensor
//! readings derived from them, and seeded corruption models.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::camera::{Camera, KeypointSequence};
use crate::error::{Error, Result};
use crate::imu::{CalibrationSet, ImuSample, ImuStream, SensorCalibration, DEFAULT_GRAVITY};
use crate::rotmath::{Rotation, Vec3};
use crate::skeleton::{forward_kinematics, MotionParams, Pose, PoseSequence, SkeletonDefinition};

use std::f64::consts::TAU;

/// `offset + amplitude · sin(2π·frequency·t + phase)` radians about `axis`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sinusoid {
    pub axis: [f64; 3],
    #[serde(default)]
    pub offset: f64,
    pub amplitude: f64,
    pub frequency: f64,
    #[serde(default)]
    pub phase: f64,
}

impl Sinusoid {
    pub fn value(&self, t: f64) -> f64 {
        self.offset + self.amplitude * (TAU * self.frequency * t + self.phase).sin()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointMotion {
    pub joint: usize,
    /// Applied left to right: the local rotation is `R(c0) ⊗ R(c1) ⊗ …`.
    pub components: Vec<Sinusoid>,
}

/// Root translation per axis: `base + Σ amplitude·sin(2πft + φ)`, mm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RootMotion {
    pub base: [f64; 3],
    pub components: Vec<Sinusoid>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotionScript {
    pub fps: f64,
    pub duration: f64,
    pub root: RootMotion,
    pub joints: Vec<JointMotion>,
}

impl MotionScript {
    pub fn frame_count(&self) -> usize {
        (self.duration * self.fps).round() as usize
    }

    pub fn still(skel: &SkeletonDefinition, fps: f64, duration: f64) -> Self {
        Self {
            fps,
            duration,
            root: RootMotion {
                base: skel.tpose()[0].into(),
                components: vec![],
            },
            joints: vec![],
        }
    }

    pub fn params_at(&self, skel: &SkeletonDefinition, t: f64) -> MotionParams {
        let mut p = MotionParams::identity(skel);
        let mut root = Vec3::from(self.root.base);
        for c in &self.root.components {
            // for the root the sinusoid is a displacement along `axis`
            root += Vec3::from(c.axis) * c.value(t);
        }
        p.root_translation = root;
        for m in &self.joints {
            let r = m.components.iter().fold(Rotation::identity(), |acc, c| {
                acc.compose(&Rotation::from_axis_angle(&Vec3::from(c.axis), c.value(t)))
            });
            p.local_rotations[m.joint] = p.local_rotations[m.joint].compose(&r);
        }
        p
    }

    fn validate(&self, skel: &SkeletonDefinition) -> Result<()> {
        if !(self.fps > 0.0) || !(self.duration >= 0.0) {
            return Err(Error::InvalidConfig(
                "fps must be > 0 and duration >= 0".into(),
            ));
        }
        if let Some(m) = self
            .joints
            .iter()
            .find(|m| m.joint == 0 || m.joint >= skel.len())
        {
            return Err(Error::UnboundJoint(m.joint));
        }
        Ok(())
    }

    /// A walking-in-place style motion for [`SkeletonDefinition::default_body`]:
    /// swinging arms and legs, flexing elbows and knees, torso sway, a slow
    /// whole-body turn and a drifting root.
    pub fn default_body(skel: &SkeletonDefinition, fps: f64, duration: f64) -> Result<Self> {
        let j = |name: &str| {
            skel.index_of(name)
                .ok_or_else(|| Error::InvalidSkeleton(format!("default motion needs joint {name}")))
        };
        let s =
            |axis: [f64; 3], offset: f64, amplitude: f64, frequency: f64, phase: f64| Sinusoid {
                axis,
                offset,
                amplitude,
                frequency,
                phase,
            };
        let (x, y, z) = ([1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]);
        let gait = 0.8;
        let turn = s(y, 0.0, 0.9, 0.037, 0.0);
        let mut joints = vec![
            JointMotion {
                joint: j("spine")?,
                components: vec![
                    turn.clone(),
                    s(x, 0.05, 0.08, gait * 2.0, 0.3),
                    s(z, 0.0, 0.06, 0.13, 0.0),
                ],
            },
            JointMotion {
                joint: j("chest")?,
                components: vec![s(y, 0.0, 0.2, gait, 0.0), s(x, 0.0, 0.05, 0.21, 1.0)],
            },
            JointMotion {
                joint: j("neck")?,
                components: vec![s(x, 0.1, 0.1, 0.27, 0.0)],
            },
            JointMotion {
                joint: j("head")?,
                components: vec![s(y, 0.0, 0.4, 0.11, 0.5), s(x, 0.0, 0.15, 0.31, 0.0)],
            },
            JointMotion {
                joint: j("r_hip")?,
                components: vec![turn.clone()],
            },
            JointMotion {
                joint: j("l_hip")?,
                components: vec![turn],
            },
        ];
        for (side, sign) in [("r", 1.0), ("l", -1.0)] {
            let phase = if sign > 0.0 {
                0.0
            } else {
                std::f64::consts::PI
            };
            joints.extend([
                // upper arm: hang down, swing fore/aft, some abduction
                JointMotion {
                    joint: j(&format!("{side}_elbow"))?,
                    components: vec![
                        s(z, sign * 1.15, sign * 0.25, 0.19, phase),
                        s(x, -0.1, 0.7, gait, phase),
                        s(y, 0.0, 0.3, 0.23, phase),
                    ],
                },
                JointMotion {
                    joint: j(&format!("{side}_wrist"))?,
                    components: vec![
                        s(y, sign * 0.9, 0.6, gait, phase + 0.7),
                        s(z, 0.0, 0.25, 0.43, phase),
                    ],
                },
                JointMotion {
                    joint: j(&format!("{side}_hand"))?,
                    components: vec![s(z, 0.0, 0.3, 0.6, phase)],
                },
                // thigh: swing opposite to the arm on the same side
                JointMotion {
                    joint: j(&format!("{side}_knee"))?,
                    components: vec![
                        s(x, -0.2, 0.55, gait, phase + std::f64::consts::PI),
                        s(z, 0.0, 0.12, 0.17, phase),
                    ],
                },
                JointMotion {
                    joint: j(&format!("{side}_ankle"))?,
                    components: vec![s(x, 0.6, 0.5, gait, phase + 2.2)],
                },
                JointMotion {
                    joint: j(&format!("{side}_toe"))?,
                    components: vec![s(x, 0.0, 0.25, gait, phase + 1.0)],
                },
            ]);
        }
        Ok(Self {
            fps,
            duration,
            root: RootMotion {
                base: skel.tpose()[0].into(),
                components: vec![
                    s(x, 0.0, 250.0, 0.05, 0.0),
                    s(z, 0.0, 400.0, 0.031, 1.3),
                    s(y, 0.0, 25.0, gait * 2.0, 0.0),
                    s(x, 0.0, 30.0, gait, 0.0),
                ],
            },
            joints,
        })
    }
}

/// Ground-truth poses (by forward kinematics) and motion parameters.
pub fn generate_truth(
    script: &MotionScript,
    skel: &SkeletonDefinition,
) -> Result<(PoseSequence, Vec<MotionParams>)> {
    script.validate(skel)?;
    let n = script.frame_count();
    let params: Vec<MotionParams> = (0..n)
        .map(|i| script.params_at(skel, i as f64 / script.fps))
        .collect();
    let poses = params
        .iter()
        .map(|p| forward_kinematics(skel, p))
        .collect::<Result<Vec<_>>>()?;
    Ok((PoseSequence::new(script.fps, poses), params))
}

/// Second finite difference of a joint trajectory scaled to mm/s². The first
/// and last frame reuse their neighbour's value.
pub fn finite_difference_acceleration(poses: &[Pose], joint: usize, fps: f64) -> Vec<Vec3> {
    let n = poses.len();
    if n < 3 {
        return vec![Vec3::zeros(); n];
    }
    let x = |i: usize| poses[i].positions[joint];
    let mut out: Vec<Vec3> = (0..n)
        .map(|i| {
            let i = i.clamp(1, n - 2);
            (x(i + 1) - x(i) * 2.0 + x(i - 1)) * (fps * fps)
        })
        .collect();
    out.shrink_to_fit();
    out
}

/// Raw sensor readings that the calibration maps back onto the truth:
/// `R_k = R_kg⁻¹ ⊗ R_kj ⊗ R_j^global` and
/// `a_rec = (R_kg R_k)⁻¹ ▷ (A_joint − gravity)`.
pub fn derive_imu(
    params: &[MotionParams],
    skel: &SkeletonDefinition,
    calib: &CalibrationSet,
    fps: f64,
) -> Result<ImuStream> {
    if let Some(s) = calib
        .sensors()
        .iter()
        .find(|s| s.joint == 0 || s.joint >= skel.len())
    {
        return Err(Error::UnboundJoint(s.joint));
    }
    let poses = params
        .iter()
        .map(|p| forward_kinematics(skel, p))
        .collect::<Result<Vec<_>>>()?;
    let globals = params
        .iter()
        .map(|p| p.global_rotations(skel))
        .collect::<Result<Vec<_>>>()?;
    let accels: Vec<Vec<Vec3>> = calib
        .sensors()
        .iter()
        .map(|s| finite_difference_acceleration(&poses, s.joint, fps))
        .collect();
    let frames = (0..params.len())
        .map(|i| {
            calib
                .sensors()
                .iter()
                .zip(&accels)
                .map(|(s, acc)| {
                    let orientation = s
                        .r_kg
                        .inverse()
                        .compose(&s.r_kj)
                        .compose(&globals[i][s.joint]);
                    let sensor_to_world = s.r_kg.compose(&orientation);
                    ImuSample {
                        sensor: s.id,
                        orientation,
                        acceleration: sensor_to_world.inverse().rotate(&(acc[i] - calib.gravity)),
                    }
                })
                .collect()
        })
        .collect();
    Ok(ImuStream { fps, frames })
}

pub fn project(poses: &PoseSequence, camera: &Camera) -> Result<KeypointSequence> {
    let frames = poses
        .frames
        .iter()
        .enumerate()
        .map(|(i, p)| {
            p.positions
                .iter()
                .enumerate()
                .map(|(j, x)| {
                    camera
                        .project(x)
                        .map(Some)
                        .ok_or(Error::BehindCamera { frame: i, joint: j })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(KeypointSequence {
        fps: poses.fps,
        frames,
    })
}

/// Corruption applied to perfect synthetic observations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSpec {
    /// Std of the displacement along the camera ray, mm.
    pub depth_sigma: f64,
    /// Lag-one correlation of the depth displacement between frames
    /// (0 gives independent frames).
    pub depth_correlation: f64,
    /// Joints receiving depth noise by name; empty means every joint.
    pub depth_joints: Vec<String>,
    /// Per-frame noise perpendicular to the camera ray, mm per axis.
    pub lateral_sigma: f64,
    /// Isotropic per-joint, per-frame position noise, mm.
    pub pose_sigma: f64,
    /// 2D keypoint noise, pixels.
    pub pixel_sigma: f64,
    /// Angle std of a random rotation applied to each IMU orientation, rad.
    pub rotation_sigma: f64,
    /// Accelerometer noise per axis, mm/s².
    pub accel_sigma: f64,
    /// Per-joint, per-frame probability of a missing 2D keypoint.
    pub occlusion: f64,
}

/// Distal limb joints: everything below the shoulders and hips.
pub const LIMB_JOINTS: [&str; 12] = [
    "r_elbow", "r_wrist", "r_hand", "l_elbow", "l_wrist", "l_hand", "r_knee", "r_ankle", "r_toe",
    "l_knee", "l_ankle", "l_toe",
];

impl Default for NoiseSpec {
    fn default() -> Self {
        Self::none()
    }
}

impl NoiseSpec {
    pub fn none() -> Self {
        Self {
            depth_sigma: 0.0,
            depth_correlation: 0.0,
            depth_joints: Vec::new(),
            lateral_sigma: 0.0,
            pose_sigma: 0.0,
            pixel_sigma: 0.0,
            rotation_sigma: 0.0,
            accel_sigma: 0.0,
            occlusion: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("depth_sigma", self.depth_sigma),
            ("lateral_sigma", self.lateral_sigma),
            ("pose_sigma", self.pose_sigma),
            ("pixel_sigma", self.pixel_sigma),
            ("rotation_sigma", self.rotation_sigma),
            ("accel_sigma", self.accel_sigma),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be finite and >= 0"
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.occlusion) {
            return Err(Error::InvalidConfig("occlusion must lie in [0, 1]".into()));
        }
        if !(0.0..1.0).contains(&self.depth_correlation) {
            return Err(Error::InvalidConfig(
                "depth_correlation must lie in [0, 1)".into(),
            ));
        }
        Ok(())
    }
}

// Independent random streams per corrupted channel.
const POSE_STREAM: u64 = 1;
const PIXEL_STREAM: u64 = 2;
const IMU_STREAM: u64 = 3;
const CALIB_STREAM: u64 = 4;

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn gaussian3(rng: &mut ChaCha8Rng) -> Vec3 {
    Vec3::new(
        StandardNormal.sample(rng),
        StandardNormal.sample(rng),
        StandardNormal.sample(rng),
    )
}

/// Depth noise moves joints along their viewing ray and lateral noise
/// perpendicular to it, both relative to the true position; isotropic noise
/// is added on top.
pub fn corrupt_poses(
    truth: &PoseSequence,
    skel: &SkeletonDefinition,
    camera: &Camera,
    spec: &NoiseSpec,
    seed: u64,
) -> Result<PoseSequence> {
    spec.validate()?;
    let mut rng = rng_for(seed, POSE_STREAM);
    let joints = truth.joints();
    let depth_mask: Vec<bool> = if spec.depth_joints.is_empty() {
        vec![true; joints]
    } else {
        let mut mask = vec![false; joints];
        for name in &spec.depth_joints {
            let j = skel
                .index_of(name)
                .ok_or_else(|| Error::InvalidConfig(format!("unknown depth-noise joint {name}")))?;
            mask[j] = true;
        }
        mask
    };
    let rho = spec.depth_correlation;
    let innovation = (1.0 - rho * rho).sqrt();
    let mut depth = vec![0.0; joints];
    let mut out = truth.clone();
    for (i, pose) in out.frames.iter_mut().enumerate() {
        for (j, x) in pose.positions.iter_mut().enumerate() {
            let ray = camera.ray(x);
            if spec.depth_sigma > 0.0 && depth_mask[j] {
                let e: f64 = StandardNormal.sample(&mut rng);
                depth[j] = if i == 0 {
                    spec.depth_sigma * e
                } else {
                    rho * depth[j] + innovation * spec.depth_sigma * e
                };
                *x += ray * depth[j];
            }
            if spec.lateral_sigma > 0.0 {
                let g = gaussian3(&mut rng);
                *x += (g - ray * g.dot(&ray)) * spec.lateral_sigma;
            }
            if spec.pose_sigma > 0.0 {
                *x += gaussian3(&mut rng) * spec.pose_sigma;
            }
        }
    }
    Ok(out)
}

pub fn corrupt_keypoints(
    clean: &KeypointSequence,
    spec: &NoiseSpec,
    seed: u64,
) -> Result<KeypointSequence> {
    spec.validate()?;
    let mut rng = rng_for(seed, PIXEL_STREAM);
    let mut out = clean.clone();
    for frame in out.frames.iter_mut() {
        for kp in frame.iter_mut() {
            if spec.occlusion > 0.0 && rng.gen::<f64>() < spec.occlusion {
                *kp = None;
                continue;
            }
            if spec.pixel_sigma > 0.0 {
                if let Some(p) = kp.as_mut() {
                    let (ex, ey): (f64, f64) = (
                        StandardNormal.sample(&mut rng),
                        StandardNormal.sample(&mut rng),
                    );
                    p.x += spec.pixel_sigma * ex;
                    p.y += spec.pixel_sigma * ey;
                }
            }
        }
    }
    Ok(out)
}

pub fn corrupt_imu(clean: &ImuStream, spec: &NoiseSpec, seed: u64) -> Result<ImuStream> {
    spec.validate()?;
    let mut rng = rng_for(seed, IMU_STREAM);
    let mut out = clean.clone();
    for frame in out.frames.iter_mut() {
        for s in frame.iter_mut() {
            if spec.rotation_sigma > 0.0 {
                let noise =
                    Rotation::from_scaled_axis(&(gaussian3(&mut rng) * spec.rotation_sigma));
                s.orientation = s.orientation.compose(&noise);
            }
            if spec.accel_sigma > 0.0 {
                s.acceleration += gaussian3(&mut rng) * spec.accel_sigma;
            }
        }
    }
    Ok(out)
}

/// Default 8-sensor rig: upper arms, forearms, thighs and shanks.
pub const DEFAULT_IMU_JOINTS: [&str; 8] = [
    "r_elbow", "r_wrist", "l_elbow", "l_wrist", "r_knee", "r_ankle", "l_knee", "l_ankle",
];

/// Sensors on `joints` with seeded random mounting offsets.
pub fn random_calibration(
    skel: &SkeletonDefinition,
    joints: &[&str],
    seed: u64,
) -> Result<CalibrationSet> {
    let mut rng = rng_for(seed, CALIB_STREAM);
    let angle = Normal::new(0.0, 1.0).expect("valid normal");
    let random_rot = |rng: &mut ChaCha8Rng| {
        let axis = gaussian3(rng);
        Rotation::from_axis_angle(&axis, angle.sample(rng) * 1.5)
    };
    let sensors = joints
        .iter()
        .enumerate()
        .map(|(id, name)| {
            let joint = skel
                .index_of(name)
                .ok_or_else(|| Error::InvalidCalibration(format!("unknown joint {name}")))?;
            Ok(SensorCalibration {
                id: id as u32,
                joint,
                r_kg: random_rot(&mut rng),
                r_kj: random_rot(&mut rng),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    CalibrationSet::new(skel, sensors, Vec3::from(DEFAULT_GRAVITY))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    pub fps: f64,
    pub seconds: f64,
    /// Emit an IMU stream (and sensor calibration).
    pub imu: bool,
    pub noise: NoiseSpec,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            fps: 25.0,
            seconds: 60.0,
            imu: true,
            noise: NoiseSpec::default_dataset(),
        }
    }
}

impl NoiseSpec {
    /// Noise of the default synthetic dataset.
    pub fn default_dataset() -> Self {
        Self {
            depth_sigma: 30.0,
            depth_correlation: 0.0,
            depth_joints: LIMB_JOINTS.iter().map(|s| s.to_string()).collect(),
            lateral_sigma: 0.0,
            pose_sigma: 10.0,
            pixel_sigma: 0.5,
            rotation_sigma: 0.05,
            accel_sigma: 200.0,
            occlusion: 0.0,
        }
    }
}

impl SynthConfig {
    /// A camera-only recording (no IMU stream) whose 3D estimates drift
    /// slowly in depth and jitter across the viewing ray, as the output of a
    /// temporal lifting network does.
    pub fn visual_only() -> Self {
        Self {
            imu: false,
            noise: NoiseSpec::temporal_lifting(),
            ..Default::default()
        }
    }
}

impl NoiseSpec {
    /// Lifting errors with temporally correlated depth and per-frame jitter
    /// perpendicular to the ray.
    pub fn temporal_lifting() -> Self {
        Self {
            depth_sigma: 40.0,
            depth_correlation: 0.95,
            lateral_sigma: 12.0,
            pose_sigma: 3.0,
            pixel_sigma: 0.5,
            ..Self::none()
        }
    }
}

/// A complete synthetic recording.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub skeleton: SkeletonDefinition,
    pub calibration: CalibrationSet,
    pub camera: Camera,
    pub truth: PoseSequence,
    pub truth_keypoints: KeypointSequence,
    /// Stand-in for the output of a 2D-to-3D lifting network.
    pub lifted: PoseSequence,
    pub keypoints: KeypointSequence,
    pub imu: Option<ImuStream>,
}

pub fn generate_dataset(cfg: &SynthConfig) -> Result<Dataset> {
    cfg.noise.validate()?;
    let skeleton = SkeletonDefinition::default_body();
    let camera = Camera::default_rig();
    let script = MotionScript::default_body(&skeleton, cfg.fps, cfg.seconds)?;
    let (truth, params) = generate_truth(&script, &skeleton)?;
    let calibration = if cfg.imu {
        random_calibration(&skeleton, &DEFAULT_IMU_JOINTS, cfg.seed)?
    } else {
        CalibrationSet::empty()
    };
    let imu = if cfg.imu {
        let clean = derive_imu(&params, &skeleton, &calibration, cfg.fps)?;
        Some(corrupt_imu(&clean, &cfg.noise, cfg.seed)?)
    } else {
        None
    };
    let truth_keypoints = project(&truth, &camera)?;
    let keypoints = corrupt_keypoints(&truth_keypoints, &cfg.noise, cfg.seed)?;
    let lifted = corrupt_poses(&truth, &skeleton, &camera, &cfg.noise, cfg.seed)?;
    Ok(Dataset {
        skeleton,
        calibration,
        camera,
        truth,
        truth_keypoints,
        lifted,
        keypoints,
        imu,
    })
}
