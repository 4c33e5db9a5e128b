//! IMU calibration into the global joint frame.
//!
//! Accelerometers follow the reaction-force convention: a sensor at rest
//! reads `-gravity` expressed in its own frame (i.e. +|g| pointing up).
//! [`CalibrationSet::gravity`] is the physical gravity vector, so the
//! gravity-free global acceleration is `R_kg ▷ (R_k ▷ a_rec) + gravity`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rotmath::{Rotation, Vec3};
use crate::skeleton::SkeletonDefinition;

/// Standard gravity, mm/s², pointing along global -y.
pub const DEFAULT_GRAVITY: [f64; 3] = [0.0, -9810.0, 0.0];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImuSample {
    pub sensor: u32,
    /// Sensor orientation with respect to its own reference frame.
    pub orientation: Rotation,
    /// Specific force in the sensor frame, mm/s², gravity reaction included.
    pub acceleration: Vec3,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensorCalibration {
    pub id: u32,
    pub joint: usize,
    /// Sensor reference frame to global frame.
    pub r_kg: Rotation,
    /// Offset between the sensor reference and the bound joint frame.
    pub r_kj: Rotation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSet {
    sensors: Vec<SensorCalibration>,
    pub gravity: Vec3,
}

impl CalibrationSet {
    /// Sensors are kept sorted by id; ids and joints must be unique and every
    /// joint must be a non-root joint of `skel`.
    pub fn new(
        skel: &SkeletonDefinition,
        mut sensors: Vec<SensorCalibration>,
        gravity: Vec3,
    ) -> Result<Self> {
        sensors.sort_by_key(|s| s.id);
        for (i, s) in sensors.iter().enumerate() {
            if s.joint == 0 || s.joint >= skel.len() {
                return Err(Error::UnboundJoint(s.joint));
            }
            if sensors[..i].iter().any(|o| o.id == s.id) {
                return Err(Error::InvalidCalibration(format!(
                    "duplicate sensor id {}",
                    s.id
                )));
            }
            if sensors[..i].iter().any(|o| o.joint == s.joint) {
                return Err(Error::InvalidCalibration(format!(
                    "joint {} bound to more than one sensor",
                    skel.name(s.joint)
                )));
            }
        }
        if !gravity.iter().all(|c| c.is_finite()) {
            return Err(Error::InvalidCalibration("non-finite gravity".into()));
        }
        Ok(Self { sensors, gravity })
    }

    pub fn empty() -> Self {
        Self {
            sensors: Vec::new(),
            gravity: Vec3::from(DEFAULT_GRAVITY),
        }
    }

    pub fn sensors(&self) -> &[SensorCalibration] {
        &self.sensors
    }

    pub fn sensor(&self, id: u32) -> Result<&SensorCalibration> {
        self.sensors
            .iter()
            .find(|s| s.id == id)
            .ok_or(Error::UnknownSensor(id))
    }

    /// Position of sensor `id` in [`Self::sensors`].
    pub fn slot(&self, id: u32) -> Option<usize> {
        self.sensors.iter().position(|s| s.id == id)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImuStream {
    pub fps: f64,
    /// Samples per frame; each frame holds at most one sample per sensor.
    pub frames: Vec<Vec<ImuSample>>,
}

impl ImuStream {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// IMU-measured global rotation of the bound joint: `R_kj⁻¹ ⊗ R_kg ⊗ R_k`.
pub fn calibrate_orientation(calib: &CalibrationSet, sample: &ImuSample) -> Result<Rotation> {
    let s = calib.sensor(sample.sensor)?;
    Ok(s.r_kj
        .inverse()
        .compose(&s.r_kg)
        .compose(&sample.orientation))
}

/// Gravity-free global acceleration of the sensor, mm/s².
pub fn calibrate_acceleration(calib: &CalibrationSet, sample: &ImuSample) -> Result<Vec3> {
    let s = calib.sensor(sample.sensor)?;
    let world = s
        .r_kg
        .rotate(&sample.orientation.rotate(&sample.acceleration));
    Ok(world + calib.gravity)
}

/// T-pose bone of the bound joint rotated by the calibrated joint rotation.
pub fn imu_bone_vector(
    calib: &CalibrationSet,
    skel: &SkeletonDefinition,
    sample: &ImuSample,
) -> Result<Vec3> {
    let s = calib.sensor(sample.sensor)?;
    if s.joint == 0 || s.joint >= skel.len() {
        return Err(Error::DegenerateBone(s.joint));
    }
    let bone = skel.tpose_bone(s.joint);
    Ok(calibrate_orientation(calib, sample)?.rotate(&bone))
}

/// All calibrated quantities for one frame, indexed by sensor slot.
#[derive(Clone, Debug, PartialEq)]
pub struct CalibratedFrame {
    pub rotations: Vec<Option<Rotation>>,
    pub accelerations: Vec<Option<Vec3>>,
    pub bones: Vec<Option<Vec3>>,
}

impl CalibratedFrame {
    /// Calibrated rotations keyed by joint, as consumed by IGIK.
    pub fn joint_rotations(&self, calib: &CalibrationSet) -> BTreeMap<usize, Rotation> {
        calib
            .sensors()
            .iter()
            .zip(&self.rotations)
            .filter_map(|(s, r)| r.map(|r| (s.joint, r)))
            .collect()
    }
}

pub fn calibrate_frame(
    calib: &CalibrationSet,
    skel: &SkeletonDefinition,
    samples: &[ImuSample],
) -> Result<CalibratedFrame> {
    let k = calib.sensors().len();
    let mut out = CalibratedFrame {
        rotations: vec![None; k],
        accelerations: vec![None; k],
        bones: vec![None; k],
    };
    for sample in samples {
        let slot = calib
            .slot(sample.sensor)
            .ok_or(Error::UnknownSensor(sample.sensor))?;
        let rot = calibrate_orientation(calib, sample)?;
        out.rotations[slot] = Some(rot);
        out.accelerations[slot] = Some(calibrate_acceleration(calib, sample)?);
        out.bones[slot] = Some(rot.rotate(&skel.tpose_bone(calib.sensors()[slot].joint)));
    }
    Ok(out)
}
