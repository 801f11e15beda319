//! Joint recovery of metric 3D ballistic object trajectories, gravity
//! direction, camera focal length, human bone lengths and absolute root
//! translations from monocular 2D observations and kinematic 3D pose
//! initializations.
//!
//! The pipeline recovers free-flight object trajectories whose known gravity
//! magnitude pins the metric scale of the whole scene, then binds one or two
//! humans to the trajectory through contact and mutual localisation
//! constraints. Everything is expressed as one weighted nonlinear
//! least-squares problem and minimized jointly with Levenberg-Marquardt.
//!
//! Module map:
//! - [`camera`]: pinhole projection and backprojection;
//! - [`ballistics`]: projectile model, closed-form and iterative recovery;
//! - [`skeleton`]: MPII-16 kinematic tree, bone re-lengthening, priors, height;
//! - [`scene`]: scene/solution containers and the JSON schema;
//! - [`episodes`]: flight-window detection in 2D tracks;
//! - [`energy`]: the seven residual blocks and their assembly;
//! - [`solver`]: the damped least-squares core and the joint scene solve;
//! - [`synth`]: synthetic ground-truth scenes and the noise sweep;
//! - [`metrics`]: MPE / MPJPE / MAE / gravity cosine / smoothness.

pub mod ballistics;
pub mod camera;
pub mod energy;
pub mod episodes;
pub mod metrics;
pub mod scene;
pub mod skeleton;
pub mod solver;
pub mod synth;

pub use ballistics::{BallisticParams, DofMode, ObservationTrack, GRAVITY_MAGNITUDE};
pub use camera::CameraIntrinsics;
pub use energy::{EnergyModel, EnergyOptions, EnergyTerm, Weights};
pub use metrics::MetricsReport;
pub use scene::{Scene, Solution};
pub use skeleton::{BoneLengths, BonePriorTable, SkeletonTopology};
pub use solver::{solve_scene, solve_scene_with_options, SolveConfig, SolveReport};
pub use synth::SceneSpec;
