//! Real-time optimisation of 3D human poses from a monocular camera and
//! body-worn inertial sensors.

pub mod camera;
pub mod energy;
pub mod error;
pub mod imu;
pub mod io;
pub mod lbfgs;
pub mod metrics;
pub mod optimizer;
pub mod pipeline;
pub mod rotmath;
pub mod skeleton;
pub mod synth;

pub use error::{Error, Result};
pub use rotmath::{Rotation, Vec3};
pub use skeleton::{Pose, PoseSequence, SkeletonDefinition};
