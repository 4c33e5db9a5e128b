use std::path::{Path, PathBuf};

use serde::Serialize;

use rtof_core::camera::Camera;
use rtof_core::imu::CalibrationSet;
use rtof_core::io::{self, write_text};
use rtof_core::metrics::MetricReport;
use rtof_core::pipeline::{self, Inputs, Mode};
use rtof_core::synth::{generate_dataset, SynthConfig};
use rtof_core::{Error, Result, SkeletonDefinition};

use crate::config::{to_toml, InputPaths, Manifest, MetricFlags, RunConfig};

pub const SKELETON_FILE: &str = "skeleton.txt";
pub const CALIBRATION_FILE: &str = "calibration.txt";
pub const TRUTH_FILE: &str = "truth.pose3d";
pub const LIFTED_FILE: &str = "lifted.pose3d";
pub const OBSERVED_FILE: &str = "observed.pose2d";
pub const TRUTH_2D_FILE: &str = "truth.pose2d";
pub const IMU_FILE: &str = "imu.txt";
pub const MANIFEST_FILE: &str = "manifest.toml";
pub const RUN_FILE: &str = "run.toml";
pub const REPORT_FILE: &str = "report.json";
pub const FRAME_METRICS_FILE: &str = "frame_metrics.txt";

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        context: format!("creating {}", dir.display()),
        source: e,
    })
}

/// Generates a dataset into `out`, together with a manifest and a run config
/// for it. Returns the written file names.
pub fn synth(out: &Path, cfg: &SynthConfig) -> Result<Vec<String>> {
    let d = generate_dataset(cfg)?;
    create_dir(out)?;
    let joints = d.skeleton.len();
    let mut files: Vec<(&str, String)> = vec![
        (SKELETON_FILE, io::write_skeleton(&d.skeleton)),
        (
            CALIBRATION_FILE,
            io::write_calibration(&d.calibration, Some(&d.camera), &d.skeleton),
        ),
        (TRUTH_FILE, io::write_pose3d(&d.truth)),
        (LIFTED_FILE, io::write_pose3d(&d.lifted)),
        (OBSERVED_FILE, io::write_pose2d(&d.keypoints, joints)),
        (TRUTH_2D_FILE, io::write_pose2d(&d.truth_keypoints, joints)),
    ];
    if let Some(imu) = &d.imu {
        files.push((IMU_FILE, io::write_imu(imu)));
    }
    let run = RunConfig {
        mode: if cfg.imu { Mode::Rtof } else { Mode::Rto },
        seed: cfg.seed,
        inputs: InputPaths {
            skeleton: Some(SKELETON_FILE.into()),
            calibration: Some(CALIBRATION_FILE.into()),
            poses: LIFTED_FILE.into(),
            keypoints: Some(OBSERVED_FILE.into()),
            imu: cfg.imu.then(|| IMU_FILE.into()),
            truth: Some(TRUTH_FILE.into()),
        },
        energy: Default::default(),
        solver: Default::default(),
        metrics: MetricFlags::default(),
    };
    files.push((RUN_FILE, to_toml(&run)?));
    let mut names: Vec<String> = files.iter().map(|(n, _)| n.to_string()).collect();
    names.push(MANIFEST_FILE.into());
    let manifest = Manifest {
        generator: format!("rtof {}", env!("CARGO_PKG_VERSION")),
        frames: d.truth.len(),
        joints,
        sensors: d.calibration.sensors().len(),
        files: names.clone(),
        synth: cfg.clone(),
    };
    files.push((MANIFEST_FILE, to_toml(&manifest)?));
    for (name, text) in &files {
        write_text(&out.join(name), text)?;
    }
    Ok(names)
}

#[derive(Clone, Debug, Serialize)]
pub struct SolverSummary {
    pub fragments: usize,
    pub iterations: usize,
    pub line_search_failures: usize,
    pub behind_camera: usize,
}

/// Everything in here is deterministic; timings are only printed.
#[derive(Clone, Debug, Serialize)]
pub struct Report {
    pub mode: Mode,
    pub seed: u64,
    pub frames: usize,
    pub solver: Option<SolverSummary>,
    pub metrics: Option<MetricReport>,
}

pub struct RunResult {
    pub report: Report,
    pub output: PathBuf,
    pub fragments_per_second: Option<f64>,
    pub frames_per_second: Option<f64>,
}

pub fn run(cfg: &RunConfig, out: &Path, per_frame_metrics: bool) -> Result<RunResult> {
    cfg.validate()?;
    let i = &cfg.inputs;
    let skeleton = match &i.skeleton {
        Some(p) => io::load_skeleton(p)?,
        None => SkeletonDefinition::default_body(),
    };
    let (calibration, camera): (Option<CalibrationSet>, Option<Camera>) = match &i.calibration {
        Some(p) => {
            let (c, cam) = io::load_calibration(p, &skeleton)?;
            (Some(c), cam)
        }
        None => (None, None),
    };
    let lifted = io::load_pose3d(&i.poses)?;
    let keypoints = i.keypoints.as_deref().map(io::load_pose2d).transpose()?;
    let imu = i.imu.as_deref().map(io::load_imu).transpose()?;
    let truth = i.truth.as_deref().map(io::load_pose3d).transpose()?;
    let per_frame = per_frame_metrics || cfg.metrics.per_frame;
    if per_frame && truth.is_none() {
        return Err(Error::MissingInput(
            "per-frame metrics need inputs.truth".into(),
        ));
    }

    let inputs = Inputs {
        skeleton: &skeleton,
        lifted: &lifted,
        camera: camera.as_ref(),
        keypoints: keypoints.as_ref(),
        calibration: calibration.as_ref(),
        imu: imu.as_ref(),
    };
    let result = pipeline::run(cfg.mode, &inputs, &cfg.energy, &cfg.solver)?;

    let metrics = truth
        .as_ref()
        .map(|t| MetricReport::compute(&result.poses, t, skeleton.names(), cfg.metrics.per_second))
        .transpose()?;
    create_dir(out)?;
    let output = out.join(format!("{}.pose3d", cfg.mode));
    write_text(&output, &io::write_pose3d(&result.poses))?;
    if let (true, Some(t)) = (per_frame, &truth) {
        write_text(
            &out.join(FRAME_METRICS_FILE),
            &io::write_frame_metrics(&result.poses, t, cfg.metrics.per_second)?,
        )?;
    }
    let report = Report {
        mode: cfg.mode,
        seed: cfg.seed,
        frames: result.poses.len(),
        solver: result.stats.as_ref().map(|s| SolverSummary {
            fragments: s.fragments,
            iterations: s.iterations,
            line_search_failures: s.line_search_failures,
            behind_camera: s.behind_camera,
        }),
        metrics,
    };
    let json =
        serde_json::to_string_pretty(&report).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    write_text(&out.join(REPORT_FILE), &(json + "\n"))?;
    Ok(RunResult {
        report,
        output,
        fragments_per_second: result.stats.as_ref().map(|s| s.fragments_per_second()),
        frames_per_second: result.stats.as_ref().map(|s| s.frames_per_second()),
    })
}
