//! The four processing modes: pass-through, visual-only optimization,
//! per-frame sensor fusion and fusion followed by optimization.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::camera::{Camera, KeypointSequence};
use crate::energy::{EnergyConfig, SensorBinding};
use crate::error::{Error, Result};
use crate::imu::{calibrate_frame, CalibratedFrame, CalibrationSet, ImuStream};
use crate::lbfgs::SolverSettings;
use crate::optimizer::{optimize_sequence, FrameInput, ObservationModel, RunStats};
use crate::skeleton::{forward_kinematics, igik, PoseSequence, SkeletonDefinition};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Baseline,
    Rto,
    Sf2,
    Rtof,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Baseline, Mode::Rto, Mode::Sf2, Mode::Rtof];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Baseline => "baseline",
            Mode::Rto => "rto",
            Mode::Sf2 => "sf2",
            Mode::Rtof => "rtof",
        }
    }

    pub fn needs_imu(self) -> bool {
        matches!(self, Mode::Sf2 | Mode::Rtof)
    }

    pub fn needs_keypoints(self) -> bool {
        matches!(self, Mode::Rto | Mode::Rtof)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| {
                Error::InvalidConfig(format!(
                    "unknown mode `{s}` (expected baseline, rto, sf2 or rtof)"
                ))
            })
    }
}

/// Everything a run may consume. Which parts are required depends on the mode.
#[derive(Clone, Copy, Debug)]
pub struct Inputs<'a> {
    pub skeleton: &'a SkeletonDefinition,
    /// 3D estimates from a lifting network (or any other source).
    pub lifted: &'a PoseSequence,
    pub camera: Option<&'a Camera>,
    pub keypoints: Option<&'a KeypointSequence>,
    pub calibration: Option<&'a CalibrationSet>,
    pub imu: Option<&'a ImuStream>,
}

impl Inputs<'_> {
    pub fn check(&self, mode: Mode) -> Result<()> {
        let t = self.lifted.len();
        for (i, p) in self.lifted.frames.iter().enumerate() {
            if p.len() != self.skeleton.len() {
                return Err(Error::LengthMismatch(format!(
                    "3D frame {i} has {} joints, skeleton {}",
                    p.len(),
                    self.skeleton.len()
                )));
            }
        }
        if mode.needs_imu() {
            let imu = self
                .imu
                .ok_or_else(|| Error::MissingInput(format!("mode {mode} needs an IMU stream")))?;
            if self.calibration.is_none_or(|c| c.sensors().is_empty()) {
                return Err(Error::MissingInput(format!(
                    "mode {mode} needs a sensor calibration"
                )));
            }
            if imu.len() != t {
                return Err(Error::LengthMismatch(format!(
                    "IMU stream has {} frames, 3D poses {t}",
                    imu.len()
                )));
            }
        }
        if mode.needs_keypoints() {
            if self.camera.is_none() {
                return Err(Error::MissingInput(format!("mode {mode} needs a camera")));
            }
            let kp = self
                .keypoints
                .ok_or_else(|| Error::MissingInput(format!("mode {mode} needs 2D keypoints")))?;
            if kp.frames.len() != t {
                return Err(Error::LengthMismatch(format!(
                    "2D stream has {} frames, 3D poses {t}",
                    kp.frames.len()
                )));
            }
            if let Some((i, f)) = kp
                .frames
                .iter()
                .enumerate()
                .find(|(_, f)| f.len() != self.skeleton.len())
            {
                return Err(Error::LengthMismatch(format!(
                    "2D frame {i} has {} joints, skeleton {}",
                    f.len(),
                    self.skeleton.len()
                )));
            }
        }
        Ok(())
    }
}

fn calibrated(inputs: &Inputs, calib: &CalibrationSet) -> Result<Vec<CalibratedFrame>> {
    let imu = inputs
        .imu
        .ok_or_else(|| Error::MissingInput("IMU stream".into()))?;
    imu.frames
        .iter()
        .map(|samples| calibrate_frame(calib, inputs.skeleton, samples))
        .collect()
}

/// Per-frame inertial-guided IK followed by FK. The root stays where the
/// input put it.
pub fn single_frame_fusion(
    skel: &SkeletonDefinition,
    lifted: &PoseSequence,
    calib: &CalibrationSet,
    frames: &[CalibratedFrame],
    theta_t: f64,
) -> Result<PoseSequence> {
    let poses = lifted
        .frames
        .iter()
        .zip(frames)
        .map(|(pose, cal)| {
            let params = igik(skel, pose, &cal.joint_rotations(calib), theta_t)?;
            forward_kinematics(skel, &params)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PoseSequence::new(lifted.fps, poses))
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub poses: PoseSequence,
    /// Present for the optimizing modes.
    pub stats: Option<RunStats>,
}

/// Model, per-frame inputs and weights of the temporal optimization of an
/// optimizing mode.
#[derive(Clone, Debug)]
pub struct Problem {
    pub model: ObservationModel,
    pub frames: Vec<FrameInput>,
    pub energy: EnergyConfig,
}

fn fuse(
    mode: Mode,
    inputs: &Inputs,
    energy: &EnergyConfig,
) -> Result<(PoseSequence, Vec<CalibratedFrame>)> {
    inputs.check(mode)?;
    energy.validate()?;
    match inputs.calibration.filter(|_| mode.needs_imu()) {
        Some(c) => {
            let cal_frames = calibrated(inputs, c)?;
            let fused = single_frame_fusion(
                inputs.skeleton,
                inputs.lifted,
                c,
                &cal_frames,
                energy.theta_t,
            )?;
            Ok((fused, cal_frames))
        }
        None => Ok((inputs.lifted.clone(), Vec::new())),
    }
}

fn problem_from(
    mode: Mode,
    inputs: &Inputs,
    energy: &EnergyConfig,
    fused: PoseSequence,
    cal_frames: Vec<CalibratedFrame>,
) -> Result<Problem> {
    let cfg = if mode == Mode::Rto {
        energy.visual_only()
    } else {
        energy.clone()
    };
    let camera = inputs
        .camera
        .ok_or_else(|| Error::MissingInput("camera".into()))?;
    let keypoints = inputs
        .keypoints
        .ok_or_else(|| Error::MissingInput("2D keypoints".into()))?;
    let sensors = inputs
        .calibration
        .filter(|_| mode.needs_imu())
        .map(|c| {
            c.sensors()
                .iter()
                .map(|s| {
                    Ok(SensorBinding {
                        joint: s.joint,
                        parent: inputs
                            .skeleton
                            .parent(s.joint)
                            .ok_or(Error::UnboundJoint(s.joint))?,
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .transpose()?
        .unwrap_or_default();
    let model = ObservationModel {
        fps: inputs.lifted.fps,
        projection: Some(camera.projection_matrix()),
        sensors,
    };
    let frames = fused
        .frames
        .into_iter()
        .enumerate()
        .map(|(i, pose)| {
            let (accelerations, bones) = match cal_frames.get(i) {
                Some(c) => (c.accelerations.clone(), c.bones.clone()),
                None => (Vec::new(), Vec::new()),
            };
            FrameInput {
                pose,
                keypoints: keypoints.frames[i].clone(),
                accelerations,
                bones,
            }
        })
        .collect();
    Ok(Problem {
        model,
        frames,
        energy: cfg,
    })
}

/// The optimization `run` would solve for `mode`; only rto and rtof have one.
pub fn problem(mode: Mode, inputs: &Inputs, energy: &EnergyConfig) -> Result<Problem> {
    if !mode.needs_keypoints() {
        return Err(Error::InvalidConfig(format!(
            "mode {mode} does not optimize"
        )));
    }
    let (fused, cal_frames) = fuse(mode, inputs, energy)?;
    problem_from(mode, inputs, energy, fused, cal_frames)
}

pub fn run(
    mode: Mode,
    inputs: &Inputs,
    energy: &EnergyConfig,
    solver: &SolverSettings,
) -> Result<RunOutput> {
    solver.validate().map_err(Error::InvalidConfig)?;
    let (fused, cal_frames) = fuse(mode, inputs, energy)?;
    match mode {
        Mode::Baseline | Mode::Sf2 => Ok(RunOutput {
            poses: fused,
            stats: None,
        }),
        Mode::Rto | Mode::Rtof => {
            let p = problem_from(mode, inputs, energy, fused, cal_frames)?;
            let (poses, stats) = optimize_sequence(&p.model, &p.frames, &p.energy, solver)?;
            Ok(RunOutput {
                poses,
                stats: Some(stats),
            })
        }
    }
}
