//! Shared generators and numerical oracles for integration tests.
#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use rtof_core::camera::{Camera, Pixel};
use rtof_core::energy::{Fragment, Observations, SensorBinding};
use rtof_core::{Pose, Vec3};

pub fn rng(seed: u64) -> ChaCha8Rng {
    rand::SeedableRng::seed_from_u64(seed)
}

fn vec3(rng: &mut ChaCha8Rng, scale: f64) -> Vec3 {
    Vec3::new(
        rng.gen_range(-scale..scale),
        rng.gen_range(-scale..scale),
        rng.gen_range(-scale..scale),
    )
}

/// A random fragment in front of a random camera, with noisy observations
/// of every kind (some missing).
pub fn random_problem(
    rng: &mut ChaCha8Rng,
    frames: usize,
    joints: usize,
) -> (Fragment, Observations) {
    let camera = Camera::look_at(
        Vec3::new(
            rng.gen_range(-500.0..500.0),
            rng.gen_range(800.0..1200.0),
            rng.gen_range(3000.0..5000.0),
        ),
        Vec3::new(0.0, 1000.0, 0.0),
        Vec3::y(),
        rng.gen_range(800.0..1200.0),
        640.0,
        360.0,
    )
    .unwrap();
    let parents: Vec<usize> = (0..joints)
        .map(|j| if j == 0 { 0 } else { rng.gen_range(0..j) })
        .collect();
    let mut poses = Vec::new();
    for _ in 0..frames {
        let mut p = vec![Vec3::new(0.0, 1000.0, 0.0) + vec3(rng, 100.0)];
        for j in 1..joints {
            let x = p[parents[j]] + vec3(rng, 300.0);
            p.push(x);
        }
        poses.push(Pose::new(p));
    }
    let frag = Fragment::from_poses(&poses, rng.gen_range(20.0..60.0), 0).unwrap();
    let sensors: Vec<SensorBinding> = (1..joints.min(3))
        .map(|j| SensorBinding {
            joint: j,
            parent: parents[j],
        })
        .collect();
    let keypoints = poses
        .iter()
        .map(|p| {
            p.positions
                .iter()
                .map(|x| {
                    (rng.gen::<f64>() > 0.1).then(|| {
                        camera.project(x).unwrap()
                            + Pixel::new(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0))
                    })
                })
                .collect()
        })
        .collect();
    let maybe =
        |rng: &mut ChaCha8Rng, scale: f64| (rng.gen::<f64>() > 0.1).then(|| vec3(rng, scale));
    let accelerations = (0..frames)
        .map(|_| sensors.iter().map(|_| maybe(rng, 5000.0)).collect())
        .collect();
    let bones = (0..frames)
        .map(|_| sensors.iter().map(|_| maybe(rng, 300.0)).collect())
        .collect();
    let obs = Observations {
        projection: Some(camera.projection_matrix()),
        keypoints,
        sensors,
        accelerations,
        bones,
    };
    (frag, obs)
}

/// Central finite differences of `f` at `x`.
pub fn central_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut y = x.to_vec();
    (0..x.len())
        .map(|i| {
            y[i] = x[i] + h;
            let up = f(&y);
            y[i] = x[i] - h;
            let down = f(&y);
            y[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Largest componentwise difference relative to the largest component.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = numeric
        .iter()
        .chain(analytic)
        .fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return 0.0;
    }
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs())
        .fold(0.0, f64::max)
        / scale
}

pub fn random_rotation(rng: &mut ChaCha8Rng, max_angle: f64) -> rtof_core::Rotation {
    let axis = vec3(rng, 1.0);
    rtof_core::Rotation::from_axis_angle(&axis, rng.gen_range(-max_angle..max_angle))
}

pub fn random_params(
    skel: &rtof_core::SkeletonDefinition,
    rng: &mut ChaCha8Rng,
) -> rtof_core::skeleton::MotionParams {
    let mut p = rtof_core::skeleton::MotionParams::identity(skel);
    p.root_translation = Vec3::new(0.0, 1000.0, 0.0) + vec3(rng, 500.0);
    for r in p.local_rotations.iter_mut().skip(1) {
        *r = random_rotation(rng, std::f64::consts::PI);
    }
    p
}

/// A random tree with bones between 20 and 400 mm.
pub fn random_skeleton(rng: &mut ChaCha8Rng, joints: usize) -> rtof_core::SkeletonDefinition {
    let mut parents = vec![None];
    let mut tpose = vec![vec3(rng, 1000.0)];
    for j in 1..joints {
        let p = rng.gen_range(0..j);
        let dir = loop {
            let d = vec3(rng, 1.0);
            if d.norm() > 0.1 {
                break d.normalize();
            }
        };
        tpose.push(tpose[p] + dir * rng.gen_range(20.0..400.0));
        parents.push(Some(p));
    }
    let names = (0..joints).map(|j| format!("j{j}")).collect();
    rtof_core::SkeletonDefinition::new(names, parents, tpose).unwrap()
}
