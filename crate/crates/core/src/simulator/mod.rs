//! Synthetic egocentric demonstrations with full ground truth, and a
//! kinematic point world for closed-loop evaluation.
//!
//! The world frame has `z` up with the table at `z = 0`. The head camera
//! starts at a fixed pose looking at the workspace centre; its first pose is
//! the egocentric frame in which demonstrations and rollouts are expressed.

mod camera;
mod corpus;
mod env;
mod eval;
mod episode;
mod expert;
mod hand_model;
mod observe;
mod scene;

pub use camera::{camera_arc, synth_tracks, CameraArcConfig, TrackerNoiseModel};
pub use corpus::{generate_corpus, CorpusConfig, CorpusReport, StageCounts};
pub use env::{env_step, env_success, EnvConfig, PointEnv};
pub use eval::{evaluate, EpisodeOutcome, EvalConfig, EvalReport, PointOracle, SceneDistribution};
pub use episode::{episode_for_scene, generate_episode, Episode, EpisodeConfig};
pub use expert::{scripted_expert, ExpertConfig, ExpertFrame, ExpertTrajectory, Phase};
pub use hand_model::{corrupt_hand, hand_keypoints, hand_orientation, HandNoiseModel, HandTruth};
pub use observe::{observe_points, observe_warped, DepthWarp, ObservationModel, WarpedObservation};
pub use scene::{generate_scene, Aabb, SceneLayout, SceneSpec, TaskFamily};

use thiserror::Error;

use crate::dataset::DatasetError;
use crate::geometry::{CameraIntrinsics, GeometryError};
use crate::hand::HandError;
use crate::triangulation::TriangulationError;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("scene cannot be executed: {0}")]
    UnreachableScene(String),
    #[error("invalid simulator config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Hand(#[from] HandError),
    #[error(transparent)]
    Triangulation(#[from] TriangulationError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

/// Default intrinsics: 1408×1408 image, 700 px focal length, centred
/// principal point.
pub fn default_intrinsics() -> CameraIntrinsics {
    CameraIntrinsics::centered(700.0, 1408).expect("valid default intrinsics")
}
