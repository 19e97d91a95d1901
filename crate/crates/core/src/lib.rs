//! Single-view 3D skeleton, focal length and mirror-plane reconstruction
//! from the 2D keypoints of a person and their mirror reflection.

pub mod body_model;
pub mod camera_geometry;
pub mod error;
pub mod lbfgs;
pub mod metrics;
pub mod objectives;
pub mod observation;
pub mod rotation;
pub mod synth;
mod serde_helpers;
pub mod solver;

pub use body_model::{
    forward_kinematics, reflect_global, reflect_pose, GlobalTransform, PoseParams, ShapeParams,
    SkeletonTemplate,
};
pub use camera_geometry::{EdgeAnnotation, EdgeDirection, MirrorPlane, PinholeCamera};
pub use error::{Error, Result};
pub use metrics::{pose_error, PoseError};
pub use objectives::{total_objective, LossWeights, Objective, Reference, SubjectParams, Variables};
pub use observation::{ImageSize, Keypoint, Observation2D};
pub use solver::{
    reconstruct_scene, sweep_focal, ReconstructionResult, SceneInput, SolverConfig, Stage,
};
pub use synth::{generate_batch, generate_scene, GroundTruthScene, SceneSpec};
