use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use rtof_core::energy::EnergyConfig;
use rtof_core::lbfgs::SolverSettings;
use rtof_core::pipeline::Mode;
use rtof_core::synth::SynthConfig;
use rtof_core::{Error, Result};

/// Input files of a run. Relative paths are resolved against the directory
/// of the config file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputPaths {
    /// Defaults to the built-in 21-joint body.
    pub skeleton: Option<PathBuf>,
    /// Sensor calibration and camera.
    pub calibration: Option<PathBuf>,
    /// 3D estimates to refine.
    pub poses: PathBuf,
    pub keypoints: Option<PathBuf>,
    pub imu: Option<PathBuf>,
    /// Ground truth; enables metrics.
    pub truth: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricFlags {
    /// MPJAE/MPJJE per second (true) or per frame.
    pub per_second: bool,
    pub per_frame: bool,
}

impl Default for MetricFlags {
    fn default() -> Self {
        Self {
            per_second: true,
            per_frame: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    /// Recorded in the report; the run itself draws no random numbers.
    #[serde(default)]
    pub seed: u64,
    pub inputs: InputPaths,
    #[serde(default)]
    pub energy: EnergyConfig,
    #[serde(default)]
    pub solver: SolverSettings,
    #[serde(default)]
    pub metrics: MetricFlags,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg: RunConfig = parse_toml(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let i = &mut cfg.inputs;
        i.poses = base.join(&i.poses);
        for p in [
            &mut i.skeleton,
            &mut i.calibration,
            &mut i.keypoints,
            &mut i.imu,
            &mut i.truth,
        ]
        .into_iter()
        .flatten()
        {
            *p = base.join(&*p);
        }
        Ok(cfg)
    }

    /// Inputs the mode needs must be named before anything is loaded.
    pub fn validate(&self) -> Result<()> {
        let missing =
            |what: &str| Error::MissingInput(format!("mode {} needs inputs.{what}", self.mode));
        if self.mode.needs_imu() {
            self.inputs.imu.as_ref().ok_or_else(|| missing("imu"))?;
            self.inputs
                .calibration
                .as_ref()
                .ok_or_else(|| missing("calibration"))?;
        }
        if self.mode.needs_keypoints() {
            self.inputs
                .keypoints
                .as_ref()
                .ok_or_else(|| missing("keypoints"))?;
            self.inputs
                .calibration
                .as_ref()
                .ok_or_else(|| missing("calibration (camera)"))?;
        }
        self.energy.validate()?;
        self.solver.validate().map_err(Error::InvalidConfig)
    }
}

/// Record of a generated dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub generator: String,
    pub frames: usize,
    pub joints: usize,
    pub sensors: usize,
    pub files: Vec<String>,
    pub synth: SynthConfig,
}

pub fn parse_toml<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = rtof_core::io::read_text(path)?;
    toml::from_str(&text).map_err(|e| {
        let line = e.span().map_or(1, |s| {
            text[..s.start.min(text.len())].matches('\n').count() + 1
        });
        Error::Parse {
            path: path.display().to_string(),
            line,
            message: e.message().to_string(),
        }
    })
}

pub fn to_toml<T: Serialize>(value: &T) -> Result<String> {
    toml::to_string(value).map_err(|e| Error::InvalidConfig(e.to_string()))
}
