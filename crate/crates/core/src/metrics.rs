//! Position, acceleration and jitter errors between two pose sequences.
//!
//! No alignment is applied: both sequences are compared in the global frame.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rotmath::Vec3;
use crate::skeleton::PoseSequence;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub frames: usize,
    /// mm
    pub mpjpe: f64,
    /// mm/s² (per second) or mm/frame² (per frame)
    pub mpjae: f64,
    /// mm/s³ (per second) or mm/frame³ (per frame)
    pub mpjje: f64,
    pub per_second: bool,
    pub per_joint: Vec<JointMetrics>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointMetrics {
    pub joint: String,
    pub mpjpe: f64,
    pub mpjae: f64,
    pub mpjje: f64,
}

fn check(pred: &PoseSequence, gt: &PoseSequence) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(Error::LengthMismatch(format!(
            "prediction has {} frames, ground truth {}",
            pred.len(),
            gt.len()
        )));
    }
    for (i, (a, b)) in pred.frames.iter().zip(&gt.frames).enumerate() {
        if a.len() != b.len() {
            return Err(Error::LengthMismatch(format!(
                "frame {i}: {} joints vs {}",
                a.len(),
                b.len()
            )));
        }
    }
    Ok(())
}

// Finite-difference stencils of order 0, 2 and 3.
const STENCILS: [&[f64]; 3] = [&[1.0], &[1.0, -2.0, 1.0], &[-1.0, 3.0, -3.0, 1.0]];

/// Mean (overall and per joint) of ‖D pred − D gt‖ for stencil `D`.
fn stencil_error(
    pred: &PoseSequence,
    gt: &PoseSequence,
    stencil: &[f64],
) -> Result<(f64, Vec<f64>)> {
    check(pred, gt)?;
    let n = stencil.len();
    if pred.len() < n {
        return Err(Error::TooShort {
            needed: n,
            got: pred.len(),
        });
    }
    let joints = pred.joints();
    let mut per_joint = vec![0.0; joints];
    let count = pred.len() + 1 - n;
    for i in 0..count {
        for (j, acc) in per_joint.iter_mut().enumerate() {
            let mut d = Vec3::zeros();
            for (k, c) in stencil.iter().enumerate() {
                d += (pred.frames[i + k].positions[j] - gt.frames[i + k].positions[j]) * *c;
            }
            *acc += d.norm();
        }
    }
    per_joint.iter_mut().for_each(|v| *v /= count as f64);
    let mean = if joints == 0 {
        0.0
    } else {
        per_joint.iter().sum::<f64>() / joints as f64
    };
    Ok((mean, per_joint))
}

pub fn mpjpe(pred: &PoseSequence, gt: &PoseSequence) -> Result<f64> {
    if pred.is_empty() && gt.is_empty() {
        return Ok(0.0);
    }
    Ok(stencil_error(pred, gt, STENCILS[0])?.0)
}

fn scale(fps: f64, order: i32, per_second: bool) -> f64 {
    if per_second {
        fps.powi(order)
    } else {
        1.0
    }
}

pub fn mpjae(pred: &PoseSequence, gt: &PoseSequence, fps: f64, per_second: bool) -> Result<f64> {
    Ok(stencil_error(pred, gt, STENCILS[1])?.0 * scale(fps, 2, per_second))
}

pub fn mpjje(pred: &PoseSequence, gt: &PoseSequence, fps: f64, per_second: bool) -> Result<f64> {
    Ok(stencil_error(pred, gt, STENCILS[2])?.0 * scale(fps, 3, per_second))
}

/// Per-joint MPJPE, used to score subsets of joints.
pub fn mpjpe_per_joint(pred: &PoseSequence, gt: &PoseSequence) -> Result<Vec<f64>> {
    Ok(stencil_error(pred, gt, STENCILS[0])?.1)
}

impl MetricReport {
    pub fn compute(
        pred: &PoseSequence,
        gt: &PoseSequence,
        joint_names: &[String],
        per_second: bool,
    ) -> Result<Self> {
        let fps = gt.fps;
        let (pe, pe_j) = stencil_error(pred, gt, STENCILS[0])?;
        let (ae, ae_j) = stencil_error(pred, gt, STENCILS[1])?;
        let (je, je_j) = stencil_error(pred, gt, STENCILS[2])?;
        let (sa, sj) = (scale(fps, 2, per_second), scale(fps, 3, per_second));
        let per_joint = (0..pe_j.len())
            .map(|j| JointMetrics {
                joint: joint_names.get(j).cloned().unwrap_or_else(|| j.to_string()),
                mpjpe: pe_j[j],
                mpjae: ae_j[j] * sa,
                mpjje: je_j[j] * sj,
            })
            .collect();
        Ok(Self {
            frames: pred.len(),
            mpjpe: pe,
            mpjae: ae * sa,
            mpjje: je * sj,
            per_second,
            per_joint,
        })
    }

    /// Human-readable report.
    pub fn to_text(&self) -> String {
        use std::fmt::Write;
        let unit = if self.per_second { "s" } else { "frame" };
        let mut s = String::new();
        let _ = writeln!(s, "frames  {}", self.frames);
        let _ = writeln!(s, "MPJPE   {:.3} mm", self.mpjpe);
        let _ = writeln!(s, "MPJAE   {:.3} mm/{unit}^2", self.mpjae);
        let _ = writeln!(s, "MPJJE   {:.3} mm/{unit}^3", self.mpjje);
        let _ = writeln!(s);
        let _ = writeln!(
            s,
            "{:<14} {:>12} {:>14} {:>14}",
            "joint", "MPJPE", "MPJAE", "MPJJE"
        );
        for j in &self.per_joint {
            let _ = writeln!(
                s,
                "{:<14} {:>12.3} {:>14.3} {:>14.3}",
                j.joint, j.mpjpe, j.mpjae, j.mpjje
            );
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::Pose;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn seq(f: impl Fn(usize, usize) -> Vec3, frames: usize, joints: usize) -> PoseSequence {
        PoseSequence::new(
            25.0,
            (0..frames)
                .map(|i| Pose::new((0..joints).map(|j| f(i, j)).collect()))
                .collect(),
        )
    }

    fn random(seed: u64, frames: usize, joints: usize) -> PoseSequence {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut data = vec![];
        for _ in 0..frames * joints {
            data.push(Vec3::new(
                rng.gen_range(-1e3..1e3),
                rng.gen_range(-1e3..1e3),
                rng.gen_range(-1e3..1e3),
            ));
        }
        seq(|i, j| data[i * joints + j], frames, joints)
    }

    #[test]
    fn identical_is_zero() {
        let a = random(1, 10, 4);
        assert_eq!(mpjpe(&a, &a).unwrap(), 0.0);
        assert_eq!(mpjae(&a, &a, 25.0, true).unwrap(), 0.0);
        assert_eq!(mpjje(&a, &a, 25.0, true).unwrap(), 0.0);
    }

    #[test]
    fn three_four_five() {
        let a = random(2, 6, 3);
        let mut b = a.clone();
        b.frames.iter_mut().for_each(|p| {
            p.positions
                .iter_mut()
                .for_each(|x| *x += Vec3::new(3.0, 4.0, 0.0))
        });
        assert!((mpjpe(&a, &b).unwrap() - 5.0).abs() < 1e-9);
        // constant offsets vanish under differencing
        assert!(mpjae(&a, &b, 25.0, true).unwrap() < 1e-6);
        assert!(mpjje(&a, &b, 25.0, false).unwrap() < 1e-9);
    }

    #[test]
    fn linear_and_quadratic_motion() {
        let lin = |v: f64| move |i: usize, j: usize| Vec3::new(v * i as f64, j as f64, 0.0);
        assert!(mpjae(&seq(lin(2.0), 8, 2), &seq(lin(-7.0), 8, 2), 25.0, true).unwrap() < 1e-6);
        let quad = |a: f64| move |i: usize, _| Vec3::new(a * (i * i) as f64, 0.0, 1.0);
        assert!(mpjje(&seq(quad(2.0), 8, 2), &seq(quad(-3.0), 8, 2), 25.0, true).unwrap() < 1e-6);
        // but the acceleration error of two different parabolas is not zero
        let e = mpjae(&seq(quad(2.0), 8, 1), &seq(quad(-3.0), 8, 1), 25.0, false).unwrap();
        assert!((e - 10.0).abs() < 1e-9);
    }

    #[test]
    fn errors() {
        let a = random(3, 5, 2);
        let b = random(4, 4, 2);
        assert!(matches!(mpjpe(&a, &b), Err(Error::LengthMismatch(_))));
        let short = random(5, 3, 2);
        assert!(matches!(
            mpjje(&short, &short, 25.0, true),
            Err(Error::TooShort { needed: 4, got: 3 })
        ));
        let two = random(5, 2, 2);
        assert!(matches!(
            mpjae(&two, &two, 25.0, true),
            Err(Error::TooShort { needed: 3, got: 2 })
        ));
    }

    #[test]
    fn brute_force_oracles() {
        let (a, b) = (random(10, 9, 3), random(11, 9, 3));
        let fps = 30.0;
        let (mut pe, mut ae, mut je) = (0.0, 0.0, 0.0);
        let d = |i: usize, j: usize| a.frames[i].positions[j] - b.frames[i].positions[j];
        for j in 0..3 {
            for i in 0..9 {
                pe += d(i, j).norm() / 27.0;
            }
            for i in 1..8 {
                ae += (d(i + 1, j) - 2.0 * d(i, j) + d(i - 1, j)).norm() / 21.0;
            }
            for i in 1..7 {
                je += (d(i + 2, j) - 3.0 * d(i + 1, j) + 3.0 * d(i, j) - d(i - 1, j)).norm() / 18.0;
            }
        }
        assert!((mpjpe(&a, &b).unwrap() - pe).abs() < 1e-9);
        assert!((mpjae(&a, &b, fps, true).unwrap() - ae * fps * fps).abs() < 1e-6);
        assert!((mpjje(&a, &b, fps, false).unwrap() - je).abs() < 1e-9);
    }

    #[test]
    fn report_text() {
        let a = random(1, 6, 2);
        let r = MetricReport::compute(&a, &a, &["x".into(), "y".into()], true).unwrap();
        assert!(r.to_text().contains("MPJJE"));
        assert_eq!(r.per_joint.len(), 2);
    }

    proptest! {
        #[test]
        fn symmetric_and_affine_invariant(s1 in 0u64..1000, s2 in 0u64..1000, v in -50.0f64..50.0, acc in -5.0f64..5.0) {
            let (a, b) = (random(s1, 7, 2), random(s2 + 1000, 7, 2));
            prop_assert!((mpjpe(&a, &b).unwrap() - mpjpe(&b, &a).unwrap()).abs() < 1e-9);
            prop_assert!((mpjje(&a, &b, 25.0, true).unwrap() - mpjje(&b, &a, 25.0, true).unwrap()).abs() < 1e-6);
            let shift = |s: &PoseSequence, f: &dyn Fn(f64) -> f64| {
                let mut s = s.clone();
                for (i, p) in s.frames.iter_mut().enumerate() {
                    p.positions.iter_mut().for_each(|x| x.x += f(i as f64));
                }
                s
            };
            let lin = |t: f64| v * t + 3.0;
            let quad = |t: f64| acc * t * t + v * t;
            let e0 = mpjae(&a, &b, 25.0, false).unwrap();
            let e1 = mpjae(&shift(&a, &lin), &shift(&b, &lin), 25.0, false).unwrap();
            prop_assert!((e0 - e1).abs() < 1e-6);
            let j0 = mpjje(&a, &b, 25.0, false).unwrap();
            let j1 = mpjje(&shift(&a, &quad), &shift(&b, &quad), 25.0, false).unwrap();
            prop_assert!((j0 - j1).abs() < 1e-6);
        }
    }
}
