mod support;

use rtof_core::imu::{
    calibrate_acceleration, calibrate_orientation, CalibrationSet, SensorCalibration,
};
use rtof_core::synth::{
    derive_imu, generate_truth, random_calibration, JointMotion, MotionScript, Sinusoid,
    DEFAULT_IMU_JOINTS,
};
use rtof_core::{SkeletonDefinition, Vec3};
use support::{random_rotation, rng};

#[test]
fn calibrated_orientations_recover_global_rotations() {
    let skel = SkeletonDefinition::default_body();
    let script = MotionScript::default_body(&skel, 25.0, 8.0).unwrap();
    let (_, params) = generate_truth(&script, &skel).unwrap();
    for seed in 0..20 {
        let calib = random_calibration(&skel, &DEFAULT_IMU_JOINTS, seed).unwrap();
        let imu = derive_imu(&params, &skel, &calib, 25.0).unwrap();
        for (p, frame) in params.iter().zip(&imu.frames) {
            let global = p.global_rotations(&skel).unwrap();
            for sample in frame {
                let joint = calib.sensor(sample.sensor).unwrap().joint;
                let got = calibrate_orientation(&calib, sample).unwrap();
                assert!(got.angle_to(&global[joint]) < 1e-9);
            }
        }
    }
}

/// One bone of length |b| swinging about z by θ(t) = a·sin(ωt).
struct Pendulum {
    bone: Vec3,
    amplitude: f64,
    omega: f64,
}

impl Pendulum {
    fn skeleton(&self) -> SkeletonDefinition {
        SkeletonDefinition::new(
            vec!["root".into(), "tip".into()],
            vec![None, Some(0)],
            vec![Vec3::zeros(), self.bone],
        )
        .unwrap()
    }

    fn script(&self, skel: &SkeletonDefinition, fps: f64, duration: f64) -> MotionScript {
        let mut s = MotionScript::still(skel, fps, duration);
        s.joints.push(JointMotion {
            joint: 1,
            components: vec![Sinusoid {
                axis: [0.0, 0.0, 1.0],
                offset: 0.0,
                amplitude: self.amplitude,
                frequency: self.omega / std::f64::consts::TAU,
                phase: 0.0,
            }],
        });
        s
    }

    /// d²/dt² of R_z(θ)·b = R_z(θ)(θ''·(z×b) − θ'²·b⊥).
    fn acceleration(&self, t: f64) -> Vec3 {
        let z = Vec3::z();
        let (w, a) = (self.omega, self.amplitude);
        let theta = a * (w * t).sin();
        let d1 = a * w * (w * t).cos();
        let d2 = -a * w * w * (w * t).sin();
        let perp = self.bone - z * self.bone.dot(&z);
        let local = z.cross(&self.bone) * d2 - perp * (d1 * d1);
        rtof_core::Rotation::from_axis_angle(&z, theta).rotate(&local)
    }
}

fn max_accel_error(p: &Pendulum, calib_seed: u64, fps: f64) -> f64 {
    let skel = p.skeleton();
    let mut r = rng(calib_seed);
    let calib = CalibrationSet::new(
        &skel,
        vec![SensorCalibration {
            id: 3,
            joint: 1,
            r_kg: random_rotation(&mut r, 3.0),
            r_kj: random_rotation(&mut r, 3.0),
        }],
        Vec3::new(0.0, -9810.0, 0.0),
    )
    .unwrap();
    let (_, params) = generate_truth(&p.script(&skel, fps, 2.0), &skel).unwrap();
    let imu = derive_imu(&params, &skel, &calib, fps).unwrap();
    let n = imu.len();
    (1..n - 1)
        .map(|i| {
            let got = calibrate_acceleration(&calib, &imu.frames[i][0]).unwrap();
            (got - p.acceleration(i as f64 / fps)).norm()
        })
        .fold(0.0, f64::max)
}

#[test]
fn calibrated_acceleration_matches_analytic_derivative() {
    let p = Pendulum {
        bone: Vec3::new(300.0, -120.0, 40.0),
        amplitude: 0.8,
        omega: 4.0,
    };
    let peak = (1..200)
        .map(|i| p.acceleration(i as f64 * 0.01).norm())
        .fold(0.0, f64::max);
    let mut previous: Option<f64> = None;
    for (seed, fps) in [25.0, 50.0, 100.0, 200.0].into_iter().enumerate() {
        let err = max_accel_error(&p, seed as u64, fps);
        assert!(err < 0.05 * peak, "fps {fps}: {err} vs peak {peak}");
        if let Some(prev) = previous {
            // central differences are second order
            let ratio = prev / err;
            assert!((3.5..4.5).contains(&ratio), "fps {fps}: ratio {ratio}");
        }
        previous = Some(err);
    }
}

#[test]
fn resting_sensor_measures_gravity_reaction_only() {
    let skel = SkeletonDefinition::default_body();
    let script = MotionScript::still(&skel, 30.0, 1.0);
    let (_, params) = generate_truth(&script, &skel).unwrap();
    let calib = random_calibration(&skel, &DEFAULT_IMU_JOINTS, 5).unwrap();
    let imu = derive_imu(&params, &skel, &calib, 30.0).unwrap();
    for frame in &imu.frames {
        for s in frame {
            assert!((s.acceleration.norm() - 9810.0).abs() < 1e-6);
            assert!(calibrate_acceleration(&calib, s).unwrap().norm() < 1e-6);
        }
    }
}
