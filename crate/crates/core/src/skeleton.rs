//! Kinematic tree, forward/inverse kinematics and inertial-guided IK.
//!
//! A joint's rotation drives the bone that ends at that joint: for a
//! non-root joint `j` with parent `p`,
//! `X_j = X_p + R_j^global ▷ B_j^T`, where `R_j^global = R_p^global ⊗ R_j^local`
//! and `B_j^T` is the T-pose bone. The root carries only a translation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rotmath::{angle_between, solve_rotation, Rotation, Vec3, ZERO_VECTOR_EPS};

/// Minimum T-pose bone length accepted by [`SkeletonDefinition::new`].
pub const MIN_TPOSE_BONE: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct SkeletonDefinition {
    names: Vec<String>,
    parents: Vec<Option<usize>>,
    tpose: Vec<Vec3>,
    bones: Vec<Vec3>,
}

impl SkeletonDefinition {
    /// Validates topology (single root at index 0, parents precede children)
    /// and T-pose bone lengths.
    pub fn new(names: Vec<String>, parents: Vec<Option<usize>>, tpose: Vec<Vec3>) -> Result<Self> {
        let n = names.len();
        if n == 0 {
            return Err(Error::InvalidSkeleton("no joints".into()));
        }
        if parents.len() != n || tpose.len() != n {
            return Err(Error::InvalidSkeleton(format!(
                "{} names, {} parents, {} positions",
                n,
                parents.len(),
                tpose.len()
            )));
        }
        if parents[0].is_some() {
            return Err(Error::InvalidSkeleton("joint 0 must be the root".into()));
        }
        let mut bones = vec![Vec3::zeros(); n];
        for j in 1..n {
            let p = parents[j].ok_or_else(|| {
                Error::InvalidSkeleton(format!("joint {} ({}) is a second root", j, names[j]))
            })?;
            if p >= j {
                return Err(Error::InvalidSkeleton(format!(
                    "joint {} ({}) has parent {} which does not precede it",
                    j, names[j], p
                )));
            }
            bones[j] = tpose[j] - tpose[p];
            if !(bones[j].norm() > MIN_TPOSE_BONE) {
                return Err(Error::InvalidSkeleton(format!(
                    "T-pose bone of joint {} ({}) is degenerate",
                    j, names[j]
                )));
            }
        }
        if tpose.iter().any(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::InvalidSkeleton("non-finite T-pose position".into()));
        }
        for (i, a) in names.iter().enumerate() {
            if names[..i].contains(a) {
                return Err(Error::InvalidSkeleton(format!("duplicate joint name {a}")));
            }
        }
        Ok(Self {
            names,
            parents,
            tpose,
            bones,
        })
    }

    /// The 21-joint body used by the synthetic rig (y up, subject facing +z).
    pub fn default_body() -> Self {
        #[rustfmt::skip]
        let joints: [(&str, Option<usize>, [f64; 3]); 21] = [
            ("hips", None, [0.0, 950.0, 0.0]),
            ("spine", Some(0), [0.0, 1050.0, 0.0]),
            ("chest", Some(1), [0.0, 1250.0, 0.0]),
            ("neck", Some(2), [0.0, 1450.0, 0.0]),
            ("head", Some(3), [0.0, 1620.0, 20.0]),
            ("r_shoulder", Some(2), [-180.0, 1420.0, 0.0]),
            ("r_elbow", Some(5), [-460.0, 1420.0, 0.0]),
            ("r_wrist", Some(6), [-710.0, 1420.0, 0.0]),
            ("r_hand", Some(7), [-800.0, 1420.0, 0.0]),
            ("l_shoulder", Some(2), [180.0, 1420.0, 0.0]),
            ("l_elbow", Some(9), [460.0, 1420.0, 0.0]),
            ("l_wrist", Some(10), [710.0, 1420.0, 0.0]),
            ("l_hand", Some(11), [800.0, 1420.0, 0.0]),
            ("r_hip", Some(0), [-100.0, 900.0, 0.0]),
            ("r_knee", Some(13), [-100.0, 480.0, 0.0]),
            ("r_ankle", Some(14), [-100.0, 80.0, 0.0]),
            ("r_toe", Some(15), [-100.0, 20.0, 130.0]),
            ("l_hip", Some(0), [100.0, 900.0, 0.0]),
            ("l_knee", Some(17), [100.0, 480.0, 0.0]),
            ("l_ankle", Some(18), [100.0, 80.0, 0.0]),
            ("l_toe", Some(19), [100.0, 20.0, 130.0]),
        ];
        Self::new(
            joints.iter().map(|j| j.0.to_string()).collect(),
            joints.iter().map(|j| j.1).collect(),
            joints.iter().map(|j| Vec3::from(j.2)).collect(),
        )
        .expect("built-in skeleton is valid")
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, j: usize) -> &str {
        &self.names[j]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn parent(&self, j: usize) -> Option<usize> {
        self.parents[j]
    }

    pub fn parents(&self) -> &[Option<usize>] {
        &self.parents
    }

    pub fn tpose(&self) -> &[Vec3] {
        &self.tpose
    }

    /// T-pose bone ending at `j`; zero for the root.
    pub fn tpose_bone(&self, j: usize) -> Vec3 {
        self.bones[j]
    }

    pub fn tpose_pose(&self) -> Pose {
        Pose::new(self.tpose.clone())
    }

    fn check(&self, joints: usize) -> Result<()> {
        if joints != self.len() {
            return Err(Error::TopologyMismatch {
                expected: self.len(),
                got: joints,
            });
        }
        Ok(())
    }
}

/// Joint positions of one frame, global frame, millimeters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub positions: Vec<Vec3>,
}

impl Pose {
    pub fn new(positions: Vec<Vec3>) -> Self {
        Self { positions }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn bone(&self, skel: &SkeletonDefinition, j: usize) -> Vec3 {
        match skel.parent(j) {
            Some(p) => self.positions[j] - self.positions[p],
            None => Vec3::zeros(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PoseSequence {
    pub fps: f64,
    pub frames: Vec<Pose>,
}

impl PoseSequence {
    pub fn new(fps: f64, frames: Vec<Pose>) -> Self {
        Self { fps, frames }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn joints(&self) -> usize {
        self.frames.first().map_or(0, Pose::len)
    }
}

/// Root translation plus one local rotation per joint. The root entry of
/// `local_rotations` is kept at identity and ignored.
#[derive(Clone, Debug, PartialEq)]
pub struct MotionParams {
    pub root_translation: Vec3,
    pub local_rotations: Vec<Rotation>,
}

impl MotionParams {
    pub fn identity(skel: &SkeletonDefinition) -> Self {
        Self {
            root_translation: skel.tpose()[0],
            local_rotations: vec![Rotation::identity(); skel.len()],
        }
    }

    /// Global rotations accumulated root to leaf.
    pub fn global_rotations(&self, skel: &SkeletonDefinition) -> Result<Vec<Rotation>> {
        skel.check(self.local_rotations.len())?;
        let mut global = vec![Rotation::identity(); skel.len()];
        for j in 1..skel.len() {
            let p = skel.parent(j).expect("non-root joint has a parent");
            global[j] = global[p].compose(&self.local_rotations[j]);
        }
        Ok(global)
    }

    fn from_globals(skel: &SkeletonDefinition, root: Vec3, global: &[Rotation]) -> Self {
        let mut local = vec![Rotation::identity(); skel.len()];
        for j in 1..skel.len() {
            let p = skel.parent(j).expect("non-root joint has a parent");
            local[j] = global[p].inverse().compose(&global[j]);
        }
        Self {
            root_translation: root,
            local_rotations: local,
        }
    }
}

pub fn forward_kinematics(skel: &SkeletonDefinition, params: &MotionParams) -> Result<Pose> {
    let global = params.global_rotations(skel)?;
    Ok(forward_from_globals(skel, params.root_translation, &global))
}

fn forward_from_globals(skel: &SkeletonDefinition, root: Vec3, global: &[Rotation]) -> Pose {
    let mut pos = vec![Vec3::zeros(); skel.len()];
    pos[0] = root;
    for j in 1..skel.len() {
        let p = skel.parent(j).expect("non-root joint has a parent");
        pos[j] = pos[p] + global[j].rotate(&skel.tpose_bone(j));
    }
    Pose::new(pos)
}

fn observed_bone(skel: &SkeletonDefinition, pose: &Pose, j: usize) -> Result<Vec3> {
    let b = pose.bone(skel, j);
    if !(b.norm() > ZERO_VECTOR_EPS) {
        return Err(Error::DegenerateBone(j));
    }
    Ok(b)
}

/// Plain IK: each bone's global rotation is the minimal rotation taking its
/// T-pose direction onto the observed direction. Bone lengths of the input
/// are discarded.
pub fn inverse_kinematics(skel: &SkeletonDefinition, pose: &Pose) -> Result<MotionParams> {
    Ok(igik_with_report(skel, pose, &BTreeMap::new(), 0.0)?.params)
}

#[derive(Clone, Debug, PartialEq)]
pub struct IgikOutput {
    pub params: MotionParams,
    /// Joints whose visual rotation was replaced by the IMU rotation.
    pub replaced: Vec<usize>,
    /// Angle between the IMU-predicted and observed bone per bound joint.
    pub disagreement: BTreeMap<usize, f64>,
}

/// Inertial-guided IK. `imu_rotations` maps joints to calibrated global
/// joint rotations; a visual rotation is replaced when the bone it predicts
/// deviates from the observed bone by more than `theta_t` radians. A
/// threshold of zero or below always trusts the IMU.
pub fn igik(
    skel: &SkeletonDefinition,
    pose: &Pose,
    imu_rotations: &BTreeMap<usize, Rotation>,
    theta_t: f64,
) -> Result<MotionParams> {
    Ok(igik_with_report(skel, pose, imu_rotations, theta_t)?.params)
}

pub fn igik_with_report(
    skel: &SkeletonDefinition,
    pose: &Pose,
    imu_rotations: &BTreeMap<usize, Rotation>,
    theta_t: f64,
) -> Result<IgikOutput> {
    skel.check(pose.len())?;
    if let Some(&j) = imu_rotations.keys().find(|&&j| j == 0 || j >= skel.len()) {
        return Err(Error::UnboundJoint(j));
    }
    let mut global = vec![Rotation::identity(); skel.len()];
    let mut replaced = Vec::new();
    let mut disagreement = BTreeMap::new();
    for j in 1..skel.len() {
        let bone = observed_bone(skel, pose, j)?;
        let tpose_bone = skel.tpose_bone(j);
        global[j] = solve_rotation(&tpose_bone, &bone)?;
        if let Some(r_imu) = imu_rotations.get(&j) {
            let imu_bone = r_imu.rotate(&tpose_bone);
            let theta = angle_between(&imu_bone, &bone)?;
            disagreement.insert(j, theta);
            if theta > theta_t || theta_t <= 0.0 {
                global[j] = *r_imu;
                replaced.push(j);
            }
        }
    }
    Ok(IgikOutput {
        params: MotionParams::from_globals(skel, pose.positions[0], &global),
        replaced,
        disagreement,
    })
}
