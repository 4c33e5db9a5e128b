mod support;

use rtof_core::energy::{EnergyConfig, HybridEnergy};
use rtof_core::lbfgs::SolverSettings;
use rtof_core::optimizer::{
    build_schedule, merge_fragments, minimize_fragment, optimize_sequence, window_problem,
    StreamingOptimizer,
};
use rtof_core::pipeline::{self, Inputs, Mode, Problem};
use rtof_core::synth::{generate_dataset, Dataset, SynthConfig};
use rtof_core::Pose;

fn dataset(seconds: f64) -> Dataset {
    generate_dataset(&SynthConfig {
        seconds,
        ..SynthConfig::default()
    })
    .unwrap()
}

fn rtof_problem(d: &Dataset) -> Problem {
    let inputs = Inputs {
        skeleton: &d.skeleton,
        lifted: &d.lifted,
        camera: Some(&d.camera),
        keypoints: Some(&d.keypoints),
        calibration: Some(&d.calibration),
        imu: d.imu.as_ref(),
    };
    pipeline::problem(Mode::Rtof, &inputs, &EnergyConfig::default()).unwrap()
}

fn bits(poses: &[Pose]) -> Vec<u64> {
    poses
        .iter()
        .flat_map(|p| {
            p.positions
                .iter()
                .flat_map(|x| x.iter().map(|v| v.to_bits()))
        })
        .collect()
}

#[test]
fn streaming_matches_batch_bitwise() {
    let d = dataset(20.0);
    let p = rtof_problem(&d);
    assert_eq!(p.frames.len(), 500);
    let settings = SolverSettings::default();
    let (batch, stats) = optimize_sequence(&p.model, &p.frames, &p.energy, &settings).unwrap();

    let mut stream = StreamingOptimizer::new(p.model.clone(), p.energy.clone(), settings).unwrap();
    let mut out = Vec::new();
    let mut latest = 0;
    for (i, f) in p.frames.iter().enumerate() {
        let emitted = stream.push(f.clone()).unwrap();
        out.extend(emitted);
        // a frame is released once both of its windows are complete
        assert!(out.len() + 50 > i, "frame {i}: only {} out", out.len());
        assert!(out.len() >= latest);
        latest = out.len();
    }
    out.extend(stream.finish().unwrap());
    assert_eq!(out.len(), 500);
    assert_eq!(bits(&out), bits(&batch.frames));
    assert_eq!(stream.stats().fragments, stats.fragments);
    assert_eq!(stream.stats().frames_out, 500);
}

#[test]
fn window_order_does_not_matter() {
    let d = dataset(6.0);
    let p = rtof_problem(&d);
    let settings = SolverSettings::default();
    let (batch, _) = optimize_sequence(&p.model, &p.frames, &p.energy, &settings).unwrap();
    let schedule = build_schedule(p.frames.len(), p.energy.fragment_len).unwrap();
    let mut optimized = vec![None; schedule.windows.len()];
    for w in (0..schedule.windows.len()).rev() {
        let (frag, obs) = window_problem(&schedule, w, &p.model, &p.frames).unwrap();
        optimized[w] = Some(
            minimize_fragment(&frag, &obs, &p.energy, &settings)
                .unwrap()
                .fragment,
        );
    }
    let optimized: Vec<_> = optimized.into_iter().map(Option::unwrap).collect();
    let merged = merge_fragments(&schedule, &optimized).unwrap();
    assert_eq!(bits(&merged.frames), bits(&batch.frames));
}

/// Plain gradient descent with backtracking; slow but hard to get wrong.
fn gradient_descent(energy: &HybridEnergy, x0: &[f64], steps: usize) -> f64 {
    let mut x = x0.to_vec();
    let mut g = vec![0.0; x.len()];
    let mut f = energy.evaluate(&x, Some(&mut g)).0;
    let mut step = 1.0;
    for _ in 0..steps {
        let gg: f64 = g.iter().map(|v| v * v).sum();
        loop {
            let y: Vec<f64> = x.iter().zip(&g).map(|(a, b)| a - step * b).collect();
            let fy = energy.evaluate(&y, None).0;
            if fy <= f - 0.5 * step * gg {
                x = y;
                f = energy.evaluate(&x, Some(&mut g)).0;
                step *= 2.0;
                break;
            }
            step *= 0.5;
            if step < 1e-20 {
                return f;
            }
        }
    }
    f
}

#[test]
fn lbfgs_reaches_gradient_descent_minimum() {
    let mut rng = support::rng(31);
    let cfg = EnergyConfig::default();
    let settings = SolverSettings {
        max_iterations: 3000,
        gradient_tolerance: 1e-10,
        ..Default::default()
    };
    for _ in 0..5 {
        let (frag, obs) = support::random_problem(&mut rng, 8, 4);
        let energy = HybridEnergy::new(&frag, &obs, &cfg).unwrap();
        let reference = gradient_descent(&energy, &frag.positions, 20000);
        let r = minimize_fragment(&frag, &obs, &cfg, &settings).unwrap();
        assert!(r.final_energy < r.initial_energy);
        assert!(
            r.final_energy <= reference + 1e-6 * reference.abs().max(1.0),
            "lbfgs {} vs gd {}",
            r.final_energy,
            reference
        );
    }
}
