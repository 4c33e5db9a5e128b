//! Fragment-based temporal optimization.
//!
//! The sequence is padded with `N/2` replicas of its first frame in front and
//! with replicas of its last frame behind, then cut into windows of `N`
//! frames advancing by `N/2`. Every original frame lands in exactly two
//! windows; after optimization the two copies are averaged.

use std::collections::BTreeMap;
use std::time::Instant;

use nalgebra::Matrix3x4;
use rayon::prelude::*;

use crate::camera::Pixel;
use crate::energy::{EnergyConfig, Fragment, HybridEnergy, Observations, SensorBinding};
use crate::error::{Error, Result};
use crate::lbfgs::{self, Objective, SolverSettings, Termination};
use crate::rotmath::Vec3;
use crate::skeleton::{Pose, PoseSequence};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Window {
    /// First padded frame index (inclusive).
    pub start: usize,
    /// One past the last padded frame index.
    pub end: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FragmentSchedule {
    pub frames: usize,
    pub fragment_len: usize,
    pub windows: Vec<Window>,
}

impl FragmentSchedule {
    pub fn half(&self) -> usize {
        self.fragment_len / 2
    }

    /// Length of the padded sequence the windows index into.
    pub fn padded_len(&self) -> usize {
        self.windows.last().map_or(0, |w| w.end)
    }

    /// Original frame shown at padded index `p`, and whether it is a replica.
    pub fn source_frame(&self, p: usize) -> (usize, bool) {
        let h = self.half();
        if p < h {
            (0, true)
        } else if p - h >= self.frames {
            (self.frames - 1, true)
        } else {
            (p - h, false)
        }
    }

    /// The two windows covering original frame `t` (earlier window first).
    pub fn covering(&self, t: usize) -> (usize, usize) {
        let k = t / self.half();
        (k, k + 1)
    }
}

pub fn build_schedule(frames: usize, fragment_len: usize) -> Result<FragmentSchedule> {
    if fragment_len < 4 || !fragment_len.is_multiple_of(2) {
        return Err(Error::InvalidN(fragment_len));
    }
    let h = fragment_len / 2;
    let count = if frames == 0 {
        0
    } else {
        frames.div_ceil(h) + 1
    };
    let windows = (0..count)
        .map(|k| Window {
            start: k * h,
            end: k * h + fragment_len,
        })
        .collect();
    Ok(FragmentSchedule {
        frames,
        fragment_len,
        windows,
    })
}

/// Everything observed for one frame, aligned with the sensor order of the
/// [`ObservationModel`].
#[derive(Clone, Debug, PartialEq)]
pub struct FrameInput {
    /// Initial estimate of the joint positions.
    pub pose: Pose,
    /// Empty when no 2D evidence exists.
    pub keypoints: Vec<Option<Pixel>>,
    pub accelerations: Vec<Option<Vec3>>,
    pub bones: Vec<Option<Vec3>>,
}

/// Frame-invariant observation geometry.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationModel {
    pub fps: f64,
    pub projection: Option<Matrix3x4<f64>>,
    pub sensors: Vec<SensorBinding>,
}

/// Initial fragment and observations for window `w` of `frames`.
///
/// Replica frames copy the 2D keypoints and bone vectors of their source
/// frame but carry no acceleration, so no inertial residual is centred on
/// them.
pub fn window_problem(
    schedule: &FragmentSchedule,
    w: usize,
    model: &ObservationModel,
    frames: &[FrameInput],
) -> Result<(Fragment, Observations)> {
    let win = schedule.windows[w];
    let mut poses = Vec::with_capacity(schedule.fragment_len);
    let mut obs = Observations {
        projection: model.projection,
        sensors: model.sensors.clone(),
        ..Default::default()
    };
    let has_keypoints = frames.iter().any(|f| !f.keypoints.is_empty());
    for p in win.start..win.end {
        let (src, replica) = schedule.source_frame(p);
        let f = &frames[src];
        poses.push(f.pose.clone());
        if has_keypoints {
            obs.keypoints.push(f.keypoints.clone());
        }
        if !model.sensors.is_empty() {
            if replica {
                obs.accelerations.push(vec![None; model.sensors.len()]);
            } else {
                obs.accelerations.push(f.accelerations.clone());
            }
            obs.bones.push(f.bones.clone());
        }
    }
    Ok((Fragment::from_poses(&poses, model.fps, win.start)?, obs))
}

#[derive(Clone, Debug, PartialEq)]
pub struct FragmentResult {
    pub fragment: Fragment,
    pub initial_energy: f64,
    pub final_energy: f64,
    pub iterations: usize,
    pub termination: Termination,
    /// Residuals skipped because points fell behind the camera.
    pub behind_camera: usize,
    /// Wall time spent in the solver for this fragment.
    pub seconds: f64,
}

impl FragmentResult {
    pub fn line_search_failed(&self) -> bool {
        self.termination == Termination::LineSearchFailure
    }
}

struct EnergyObjective<'a>(HybridEnergy<'a>);

impl Objective for EnergyObjective<'_> {
    fn evaluate(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        self.0.evaluate(x, Some(grad)).0
    }
}

/// Minimizes the normalized hybrid energy of `frag`, starting from `frag`.
pub fn minimize_fragment(
    frag: &Fragment,
    obs: &Observations,
    cfg: &EnergyConfig,
    settings: &SolverSettings,
) -> Result<FragmentResult> {
    cfg.validate()?;
    settings.validate().map_err(Error::InvalidConfig)?;
    let started = Instant::now();
    let energy = HybridEnergy::new(frag, obs, cfg)?;
    let min = lbfgs::minimize(&EnergyObjective(energy.clone()), &frag.positions, settings);
    if min.termination == Termination::LineSearchFailure {
        log::warn!(
            "line search failed on fragment starting at {} after {} iterations",
            frag.start,
            min.iterations
        );
    }
    let behind_camera = energy.evaluate(&min.x, None).1;
    Ok(FragmentResult {
        fragment: frag.with_positions(min.x),
        initial_energy: min.initial_value,
        final_energy: min.value,
        iterations: min.iterations,
        termination: min.termination,
        behind_camera,
        seconds: started.elapsed().as_secs_f64(),
    })
}

/// Averages the two optimized copies of every original frame.
pub fn merge_fragments(
    schedule: &FragmentSchedule,
    optimized: &[Fragment],
) -> Result<PoseSequence> {
    if optimized.len() != schedule.windows.len() {
        return Err(Error::ScheduleMismatch(format!(
            "{} fragments for {} windows",
            optimized.len(),
            schedule.windows.len()
        )));
    }
    for (w, f) in schedule.windows.iter().zip(optimized) {
        if f.frames != schedule.fragment_len || f.start != w.start {
            return Err(Error::ScheduleMismatch(format!(
                "fragment at {} with {} frames does not match window {}..{}",
                f.start, f.frames, w.start, w.end
            )));
        }
    }
    let fps = optimized.first().map_or(0.0, |f| f.fps);
    let frames = (0..schedule.frames)
        .map(|t| {
            merge_frame(
                schedule,
                t,
                &optimized[t / schedule.half()],
                &optimized[t / schedule.half() + 1],
            )
        })
        .collect();
    Ok(PoseSequence::new(fps, frames))
}

fn merge_frame(schedule: &FragmentSchedule, t: usize, a: &Fragment, b: &Fragment) -> Pose {
    let p = t + schedule.half();
    let (ia, ib) = (p - a.start, p - b.start);
    Pose::new(
        (0..a.joints)
            .map(|j| (a.point(ia, j) + b.point(ib, j)) * 0.5)
            .collect(),
    )
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunStats {
    pub fragments: usize,
    pub iterations: usize,
    pub line_search_failures: usize,
    pub behind_camera: usize,
    /// Summed per-fragment solver time, i.e. single-core cost.
    pub solver_seconds: f64,
    pub wall_seconds: f64,
    pub frames_out: usize,
}

impl RunStats {
    pub fn fragments_per_second(&self) -> f64 {
        self.fragments as f64 / self.solver_seconds.max(1e-12)
    }

    pub fn frames_per_second(&self) -> f64 {
        self.frames_out as f64 / self.solver_seconds.max(1e-12)
    }

    fn record(&mut self, r: &FragmentResult) {
        self.fragments += 1;
        self.iterations += r.iterations;
        self.behind_camera += r.behind_camera;
        self.solver_seconds += r.seconds;
        if r.line_search_failed() {
            self.line_search_failures += 1;
        }
    }
}

fn optimize_window(
    schedule: &FragmentSchedule,
    w: usize,
    model: &ObservationModel,
    frames: &[FrameInput],
    cfg: &EnergyConfig,
    settings: &SolverSettings,
) -> Result<FragmentResult> {
    let (frag, obs) = window_problem(schedule, w, model, frames)?;
    minimize_fragment(&frag, &obs, cfg, settings)
}

/// Optimizes every window (in parallel) and merges the result.
pub fn optimize_sequence(
    model: &ObservationModel,
    frames: &[FrameInput],
    cfg: &EnergyConfig,
    settings: &SolverSettings,
) -> Result<(PoseSequence, RunStats)> {
    cfg.validate()?;
    let schedule = build_schedule(frames.len(), cfg.fragment_len)?;
    let started = Instant::now();
    let results: Vec<FragmentResult> = (0..schedule.windows.len())
        .into_par_iter()
        .map(|w| optimize_window(&schedule, w, model, frames, cfg, settings))
        .collect::<Result<_>>()?;
    let mut stats = RunStats::default();
    results.iter().for_each(|r| stats.record(r));
    let optimized: Vec<Fragment> = results.into_iter().map(|r| r.fragment).collect();
    let merged = if frames.is_empty() {
        PoseSequence::new(model.fps, Vec::new())
    } else {
        let mut m = merge_fragments(&schedule, &optimized)?;
        m.fps = model.fps;
        m
    };
    stats.wall_seconds = started.elapsed().as_secs_f64();
    stats.frames_out = merged.len();
    Ok((merged, stats))
}

/// Incremental optimizer: frames are pushed in order and output frames are
/// released as soon as both fragments covering them are optimized. Output is
/// identical to [`optimize_sequence`] on the same input.
pub struct StreamingOptimizer {
    model: ObservationModel,
    cfg: EnergyConfig,
    settings: SolverSettings,
    half: usize,
    frames: Vec<FrameInput>,
    done: BTreeMap<usize, Fragment>,
    next_window: usize,
    next_output: usize,
    stats: RunStats,
}

impl StreamingOptimizer {
    pub fn new(
        model: ObservationModel,
        cfg: EnergyConfig,
        settings: SolverSettings,
    ) -> Result<Self> {
        cfg.validate()?;
        settings.validate().map_err(Error::InvalidConfig)?;
        Ok(Self {
            half: cfg.fragment_len / 2,
            model,
            cfg,
            settings,
            frames: Vec::new(),
            done: BTreeMap::new(),
            next_window: 0,
            next_output: 0,
            stats: RunStats::default(),
        })
    }

    pub fn stats(&self) -> &RunStats {
        &self.stats
    }

    pub fn push(&mut self, frame: FrameInput) -> Result<Vec<Pose>> {
        self.frames.push(frame);
        // Window k touches original frames up to (k+1)h-1; once they exist it
        // needs no trailing padding and matches the batch window exactly.
        let len = self.frames.len();
        let schedule = build_schedule(len, self.cfg.fragment_len)?;
        while (self.next_window + 1) * self.half <= len {
            self.run_window(&schedule, self.next_window)?;
            self.next_window += 1;
        }
        Ok(self.emit(false))
    }

    /// Flushes the tail of the stream using trailing padding.
    pub fn finish(&mut self) -> Result<Vec<Pose>> {
        let schedule = build_schedule(self.frames.len(), self.cfg.fragment_len)?;
        while self.next_window < schedule.windows.len() {
            self.run_window(&schedule, self.next_window)?;
            self.next_window += 1;
        }
        Ok(self.emit(true))
    }

    fn run_window(&mut self, schedule: &FragmentSchedule, w: usize) -> Result<()> {
        let started = Instant::now();
        let r = optimize_window(
            schedule,
            w,
            &self.model,
            &self.frames,
            &self.cfg,
            &self.settings,
        )?;
        self.stats.wall_seconds += started.elapsed().as_secs_f64();
        self.stats.record(&r);
        self.done.insert(w, r.fragment);
        Ok(())
    }

    fn emit(&mut self, all: bool) -> Vec<Pose> {
        let mut out = Vec::new();
        let schedule = FragmentSchedule {
            frames: self.frames.len(),
            fragment_len: self.cfg.fragment_len,
            windows: Vec::new(),
        };
        while self.next_output < self.frames.len() {
            let (a, b) = schedule.covering(self.next_output);
            let (Some(fa), Some(fb)) = (self.done.get(&a), self.done.get(&b)) else {
                debug_assert!(!all, "all windows are optimized at finish");
                break;
            };
            out.push(merge_frame(&schedule, self.next_output, fa, fb));
            self.next_output += 1;
            // the earlier window is not needed by any later frame
            let next_first = self.next_output / self.half;
            self.done.retain(|&k, _| k >= next_first);
        }
        self.stats.frames_out += out.len();
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_matches_four_frame_example() {
        let s = build_schedule(4, 4).unwrap();
        let starts: Vec<usize> = s.windows.iter().map(|w| w.start).collect();
        assert_eq!(starts, vec![0, 2, 4]);
        assert_eq!(s.padded_len(), 8);
        let padded: Vec<(usize, bool)> = (0..8).map(|p| s.source_frame(p)).collect();
        assert_eq!(
            padded,
            vec![
                (0, true),
                (0, true),
                (0, false),
                (1, false),
                (2, false),
                (3, false),
                (3, true),
                (3, true)
            ]
        );
    }

    #[test]
    fn single_frame_covered_twice() {
        let s = build_schedule(1, 4).unwrap();
        assert_eq!(s.windows.len(), 2);
        for w in &s.windows {
            assert!((w.start..w.end).any(|p| s.source_frame(p) == (0, false)));
        }
    }

    #[test]
    fn schedule_rejects_bad_n() {
        assert!(matches!(build_schedule(10, 5), Err(Error::InvalidN(5))));
        assert!(matches!(build_schedule(10, 2), Err(Error::InvalidN(2))));
    }

    fn brute_force_cover(s: &FragmentSchedule) -> Vec<usize> {
        let mut count = vec![0; s.frames];
        for w in &s.windows {
            for p in w.start..w.end {
                if let (t, false) = s.source_frame(p) {
                    count[t] += 1;
                }
            }
        }
        count
    }

    #[test]
    fn ten_frames_two_cover() {
        let s = build_schedule(10, 4).unwrap();
        assert_eq!(brute_force_cover(&s), vec![2; 10]);
    }

    #[test]
    fn two_cover_exhaustive() {
        for n in (4..=64).step_by(2) {
            for t in 1..=200 {
                let s = build_schedule(t, n).unwrap();
                assert!(brute_force_cover(&s).iter().all(|&c| c == 2), "T={t} N={n}");
                for pair in s.windows.windows(2) {
                    assert_eq!(pair[1].start - pair[0].start, n / 2);
                }
                for u in 0..t {
                    let (a, b) = s.covering(u);
                    for k in [a, b] {
                        let w = s.windows[k];
                        assert!((w.start..w.end).contains(&(u + n / 2)));
                    }
                }
            }
        }
    }

    fn const_fragment(start: usize, frames: usize, value: f64) -> Fragment {
        Fragment {
            positions: vec![value; frames * 3],
            frames,
            joints: 1,
            fps: 25.0,
            start,
        }
    }

    #[test]
    fn merge_averages_copies() {
        let s = build_schedule(2, 4).unwrap();
        let frags = vec![const_fragment(0, 4, 1.0), const_fragment(2, 4, 3.0)];
        let out = merge_fragments(&s, &frags).unwrap();
        assert_eq!(out.len(), 2);
        for p in &out.frames {
            assert_eq!(p.positions[0], Vec3::new(2.0, 2.0, 2.0));
        }
        let same = vec![const_fragment(0, 4, 1.5), const_fragment(2, 4, 1.5)];
        let out = merge_fragments(&s, &same).unwrap();
        assert_eq!(out.frames[1].positions[0], Vec3::repeat(1.5));
    }

    #[test]
    fn merge_rejects_mismatch() {
        let s = build_schedule(4, 4).unwrap();
        let frags = vec![const_fragment(0, 4, 1.0), const_fragment(2, 4, 3.0)];
        assert!(matches!(
            merge_fragments(&s, &frags),
            Err(Error::ScheduleMismatch(_))
        ));
        let shifted = vec![
            const_fragment(0, 4, 1.0),
            const_fragment(3, 4, 1.0),
            const_fragment(4, 4, 1.0),
        ];
        assert!(merge_fragments(&s, &shifted).is_err());
    }

    #[test]
    fn merge_random_brute_force() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let s = build_schedule(13, 6).unwrap();
        let frags: Vec<Fragment> = s
            .windows
            .iter()
            .map(|w| Fragment {
                positions: (0..6 * 2 * 3)
                    .map(|_| rng.gen_range(-100.0..100.0))
                    .collect(),
                frames: 6,
                joints: 2,
                fps: 25.0,
                start: w.start,
            })
            .collect();
        let out = merge_fragments(&s, &frags).unwrap();
        for t in 0..13 {
            let p = t + 3;
            let copies: Vec<Vec3> = frags
                .iter()
                .filter(|f| (f.start..f.start + 6).contains(&p))
                .map(|f| f.point(p - f.start, 1))
                .collect();
            assert_eq!(copies.len(), 2);
            let mean = (copies[0] + copies[1]) / 2.0;
            assert!((out.frames[t].positions[1] - mean).norm() < 1e-12);
        }
    }

    #[test]
    fn empty_stream() {
        let model = ObservationModel {
            fps: 25.0,
            projection: None,
            sensors: vec![],
        };
        let mut s = StreamingOptimizer::new(
            model.clone(),
            EnergyConfig::default(),
            SolverSettings::default(),
        )
        .unwrap();
        assert!(s.finish().unwrap().is_empty());
        let (seq, stats) = optimize_sequence(
            &model,
            &[],
            &EnergyConfig::default(),
            &SolverSettings::default(),
        )
        .unwrap();
        assert!(seq.is_empty());
        assert_eq!(stats.fragments, 0);
    }
}
