mod support;

use std::collections::BTreeMap;

use rtof_core::skeleton::{forward_kinematics, igik_with_report, inverse_kinematics};
use rtof_core::SkeletonDefinition;
use support::{random_params, random_rotation, random_skeleton, rng};

fn max_position_error(a: &rtof_core::Pose, b: &rtof_core::Pose) -> f64 {
    a.positions
        .iter()
        .zip(&b.positions)
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
}

fn assert_bone_lengths(skel: &SkeletonDefinition, pose: &rtof_core::Pose) {
    for j in 1..skel.len() {
        let want = skel.tpose_bone(j).norm();
        let got = pose.bone(skel, j).norm();
        assert!(
            (got - want).abs() <= 1e-9 * want,
            "joint {j}: {got} vs {want}"
        );
    }
}

#[test]
fn fk_ik_fk_is_a_fixed_point() {
    let mut r = rng(21);
    let body = SkeletonDefinition::default_body();
    for i in 0..1000 {
        let skel = if i % 2 == 0 {
            body.clone()
        } else {
            random_skeleton(&mut r, 2 + i % 30)
        };
        let pose = forward_kinematics(&skel, &random_params(&skel, &mut r)).unwrap();
        assert_bone_lengths(&skel, &pose);
        let again = forward_kinematics(&skel, &inverse_kinematics(&skel, &pose).unwrap()).unwrap();
        assert_bone_lengths(&skel, &again);
        let err = max_position_error(&pose, &again);
        assert!(err < 1e-6, "pose {i}: {err} mm");
    }
}

#[test]
fn igik_with_exact_imus_and_zero_threshold_reproduces_truth() {
    let mut r = rng(22);
    let skel = SkeletonDefinition::default_body();
    let bound = [6usize, 7, 10, 11, 14, 15, 18, 19];
    for _ in 0..200 {
        let truth = random_params(&skel, &mut r);
        let global = truth.global_rotations(&skel).unwrap();
        let mut pose = forward_kinematics(&skel, &truth).unwrap();
        // corrupt the limbs visually
        for &j in &bound {
            pose.positions[j] += support_offset(&mut r);
        }
        let imu: BTreeMap<_, _> = bound.iter().map(|&j| (j, global[j])).collect();
        let out = igik_with_report(&skel, &pose, &imu, 0.0).unwrap();
        let got = out.params.global_rotations(&skel).unwrap();
        for &j in &bound {
            assert!(got[j].angle_to(&global[j]) < 1e-9);
        }
        assert_bone_lengths(&skel, &forward_kinematics(&skel, &out.params).unwrap());
    }
}

fn support_offset(r: &mut rand_chacha::ChaCha8Rng) -> rtof_core::Vec3 {
    random_rotation(r, 3.0).rotate(&rtof_core::Vec3::new(80.0, 0.0, 0.0))
}

#[test]
fn raising_the_threshold_never_adds_replacements() {
    let mut r = rng(23);
    let skel = SkeletonDefinition::default_body();
    for _ in 0..100 {
        let truth = random_params(&skel, &mut r);
        let pose = forward_kinematics(&skel, &truth).unwrap();
        let imu: BTreeMap<_, _> = [6usize, 7, 14, 15]
            .iter()
            .map(|&j| (j, random_rotation(&mut r, 3.0)))
            .collect();
        let mut prev: Option<Vec<usize>> = None;
        for deg in [0.0f64, 5.0, 15.0, 45.0, 90.0, 180.0] {
            let out = igik_with_report(&skel, &pose, &imu, deg.to_radians()).unwrap();
            if let Some(p) = &prev {
                assert!(out.replaced.iter().all(|j| p.contains(j)));
            }
            prev = Some(out.replaced);
        }
    }
}
