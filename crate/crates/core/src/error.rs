use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("vector norm too small to define a direction")]
    ZeroVector,
    #[error("invalid rotation: {0}")]
    InvalidRotation(String),
    #[error("invalid skeleton: {0}")]
    InvalidSkeleton(String),
    #[error("topology mismatch: expected {expected} joints, got {got}")]
    TopologyMismatch { expected: usize, got: usize },
    #[error("degenerate bone at joint {0}")]
    DegenerateBone(usize),
    #[error("IMU bound to unknown or root joint {0}")]
    UnboundJoint(usize),
    #[error("unknown sensor id {0}")]
    UnknownSensor(u32),
    #[error("invalid calibration: {0}")]
    InvalidCalibration(String),
    #[error("invalid fragment length N={0} (must be even and >= 4)")]
    InvalidN(usize),
    #[error("invalid energy configuration: {0}")]
    InvalidConfig(String),
    #[error("fragments do not match schedule: {0}")]
    ScheduleMismatch(String),
    #[error("sequence length mismatch: {0}")]
    LengthMismatch(String),
    #[error("sequence too short: need at least {needed} frames, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("point behind camera at frame {frame}, joint {joint}")]
    BehindCamera { frame: usize, joint: usize },
    #[error("missing input: {0}")]
    MissingInput(String),
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("{path}: unsupported format header `{found}` (expected `{expected}`)")]
    Version {
        path: String,
        found: String,
        expected: String,
    },
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Coarse category used for process exit codes and diagnostics.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Parse { .. } | Error::Version { .. } => "parse",
            Error::Io { .. } => "io",
            Error::MissingInput(_) => "missing-input",
            Error::InvalidConfig(_) | Error::InvalidN(_) => "config",
            Error::InvalidSkeleton(_)
            | Error::InvalidCalibration(_)
            | Error::TopologyMismatch { .. }
            | Error::UnboundJoint(_)
            | Error::UnknownSensor(_)
            | Error::ScheduleMismatch(_)
            | Error::LengthMismatch(_)
            | Error::TooShort { .. } => "input",
            Error::ZeroVector
            | Error::InvalidRotation(_)
            | Error::DegenerateBone(_)
            | Error::BehindCamera { .. } => "numeric",
        }
    }

    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }
}
