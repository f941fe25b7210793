use serde::{Deserialize, Serialize};

use crate::dataset::{build_demonstration, BuildOptions, BuiltDemonstration, DemoMeta, DemoSource};
use crate::geometry::{CameraIntrinsics, RigidTransform};
use crate::hand::{FrameRecord, GraspDetector, HandCorrection, UnifiedAction};
use crate::seed;
use crate::triangulation::{ObjectState, PointTrack, TriangulationConfig};

use super::{
    camera_arc, corrupt_hand, default_intrinsics, scripted_expert, synth_tracks, CameraArcConfig, ExpertConfig, ExpertTrajectory,
    HandNoiseModel, HandTruth, SceneLayout, SceneSpec, SimError, TaskFamily, TrackerNoiseModel,
};

/// Everything that shapes one synthetic recording.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EpisodeConfig {
    pub task_name: String,
    pub family: TaskFamily,
    pub frame_rate: f64,
    pub intrinsics: CameraIntrinsics,
    pub layout: SceneLayout,
    pub expert: ExpertConfig,
    pub arc: CameraArcConfig,
    pub tracker: TrackerNoiseModel,
    pub hand_noise: HandNoiseModel,
    pub triangulation: TriangulationConfig,
    pub correction: HandCorrection,
    pub grasp_threshold: f64,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            task_name: "pick_place".into(),
            family: TaskFamily::PickPlace,
            frame_rate: 30.0,
            intrinsics: default_intrinsics(),
            layout: SceneLayout::default(),
            expert: ExpertConfig::default(),
            arc: CameraArcConfig::default(),
            tracker: TrackerNoiseModel::default(),
            hand_noise: HandNoiseModel::default(),
            triangulation: TriangulationConfig::default(),
            correction: HandCorrection::FrameReplacement,
            grasp_threshold: 0.05,
        }
    }
}

impl EpisodeConfig {
    /// Options for the episode drawn from `seed`.
    pub fn build_options(&self, seed: u64) -> BuildOptions {
        BuildOptions {
            task_name: self.task_name.clone(),
            triangulation: self.triangulation.clone(),
            grasp: GraspDetector::new(self.grasp_threshold),
            correction: self.correction,
            ransac_seed: seed::derive_tagged(seed, "ransac", 0),
            meta: DemoMeta { seed, frame_rate: self.frame_rate, source: DemoSource::Synthetic },
        }
    }
}

/// Simulated estimator output together with its ground truth.
#[derive(Debug, Clone)]
pub struct Episode {
    pub seed: u64,
    pub scene: SceneSpec,
    pub expert: ExpertTrajectory,
    pub frames: Vec<FrameRecord>,
    pub tracks: Vec<PointTrack>,
    /// True actions in the egocentric frame.
    pub truth_actions: Vec<UnifiedAction>,
    /// True object points in the egocentric frame.
    pub truth_points: ObjectState,
}

impl Episode {
    /// Runs the extraction pipeline on the simulated estimator output.
    pub fn build(&self, cfg: &EpisodeConfig) -> Result<BuiltDemonstration, SimError> {
        let opts = cfg.build_options(self.seed);
        Ok(build_demonstration(&self.frames, &self.tracks, &cfg.intrinsics, &opts)?)
    }
}

/// Scene drawn from `seed`, then [`episode_for_scene`].
pub fn generate_episode(cfg: &EpisodeConfig, seed: u64) -> Result<Episode, SimError> {
    let scene = cfg.layout.generate_scene(cfg.family, seed::derive_tagged(seed, "scene", 0));
    episode_for_scene(&scene, cfg, seed)
}

/// Records the scripted expert in `scene`. The head follows the arc while the
/// object is static and then stays at the arc's last pose; tracks cover the
/// static frames only.
pub fn episode_for_scene(scene: &SceneSpec, cfg: &EpisodeConfig, seed: u64) -> Result<Episode, SimError> {
    let layout = &cfg.layout;
    let expert = scripted_expert(scene, layout, &cfg.expert, seed::derive_tagged(seed, "expert", 0))?;
    let arc = camera_arc(layout, &cfg.arc, seed::derive_tagged(seed, "arc", 0))?;
    let static_len = expert.static_frames().min(arc.len());
    let pose_at = |i: usize| arc[i.min(static_len - 1)];

    let truth: Vec<HandTruth> = (0..expert.len())
        .map(|i| {
            let camera_pose = pose_at(i);
            HandTruth { frame_index: i, camera_pose, keypoints: expert.keypoints(i).transformed(&camera_pose.inverse()) }
        })
        .collect();
    let frames = corrupt_hand(&truth, &cfg.hand_noise, seed::derive_tagged(seed, "hand", 0))?;
    let tracks = synth_tracks(
        &scene.state_points(),
        &arc[..static_len],
        &cfg.intrinsics,
        &cfg.tracker,
        seed::derive_tagged(seed, "tracks", 0),
    )?;

    let ego: RigidTransform = arc[0].inverse();
    let truth_actions = expert.actions().iter().map(|a| a.transformed(&ego)).collect();
    Ok(Episode { seed, scene: scene.clone(), expert, frames, tracks, truth_actions, truth_points: scene.state_in(&arc[0]) })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quiet() -> EpisodeConfig {
        EpisodeConfig { tracker: TrackerNoiseModel::zero(), hand_noise: HandNoiseModel::zero(), ..Default::default() }
    }

    #[test]
    fn noiseless_episode_recovers_truth() {
        let cfg = quiet();
        let ep = generate_episode(&cfg, 5).unwrap();
        let built = ep.build(&cfg).unwrap();
        for (a, b) in built.demo.actions().iter().zip(&ep.truth_actions) {
            assert!((a.thumb_tip - b.thumb_tip).norm() < 1e-9);
            assert!((a.index_tip - b.index_tip).norm() < 1e-9);
            assert_eq!(a.gripper, b.gripper);
        }
        for (p, q) in built.demo.object_state.points.iter().zip(&ep.truth_points.points) {
            assert!((p - q).norm() < 1e-4);
        }
    }

    #[test]
    fn camera_holds_after_the_arc() {
        let cfg = EpisodeConfig::default();
        let ep = generate_episode(&cfg, 1).unwrap();
        let n = ep.expert.static_frames();
        assert!(ep.frames[n..].iter().all(|f| f.camera_pose == ep.frames[n - 1].camera_pose));
        assert!(ep.tracks.iter().all(|t| t.len() == n));
    }

    #[test]
    fn episodes_are_deterministic() {
        let cfg = EpisodeConfig::default();
        let a = generate_episode(&cfg, 3).unwrap();
        let b = generate_episode(&cfg, 3).unwrap();
        assert_eq!(a.frames, b.frames);
        assert_eq!(a.tracks, b.tracks);
    }
}
