use serde::{Deserialize, Serialize};

use crate::geometry::{CameraIntrinsics, Vec3};
use crate::hand::{UnifiedAction, GRIPPER_CLOSED, GRIPPER_OPEN};
use crate::par;
use crate::policy::{rollout, ActionChunker, HistoryBuffer, PolicyError};
use crate::seed;
use crate::triangulation::ObjectState;

use super::{default_intrinsics, observe_points, EnvConfig, ObservationModel, PointEnv, SceneLayout, SceneSpec, SimError, TaskFamily};

/// Where held-out object poses come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SceneDistribution {
    #[default]
    InVolume,
    OutOfVolume,
}

impl SceneDistribution {
    pub fn scene(&self, layout: &SceneLayout, family: TaskFamily, seed: u64) -> SceneSpec {
        match self {
            SceneDistribution::InVolume => layout.generate_scene(family, seed),
            SceneDistribution::OutOfVolume => layout.out_of_volume_scene(family, seed),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub family: TaskFamily,
    pub distribution: SceneDistribution,
    pub observation: ObservationModel,
    pub env: EnvConfig,
    pub layout: SceneLayout,
    pub intrinsics: CameraIntrinsics,
    pub aggregation_m: f64,
    pub num_episodes: usize,
    /// Keep full per-step traces in the report.
    pub keep_traces: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            family: TaskFamily::PickPlace,
            distribution: SceneDistribution::InVolume,
            observation: ObservationModel::triangulated(),
            env: EnvConfig::default(),
            layout: SceneLayout::default(),
            intrinsics: default_intrinsics(),
            aggregation_m: 0.1,
            num_episodes: 50,
            keep_traces: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeOutcome {
    pub seed: u64,
    pub success: bool,
    pub grasped: bool,
    /// Distance of the object (or hand, for reach) from the goal at the end.
    pub final_goal_distance: f64,
    /// Mean distance between observed and true object points.
    pub observation_error: f64,
    pub executed: Option<Vec<UnifiedAction>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub success_rate: f64,
    pub successes: usize,
    pub episodes: Vec<EpisodeOutcome>,
}

/// Rolls `policy` out on `cfg.num_episodes` held-out scenes; episode `i`
/// uses `derive_tagged(seed, "eval", i)` for its scene and observation.
pub fn evaluate<P: ActionChunker + Sync>(policy: &P, cfg: &EvalConfig, seed: u64) -> Result<EvalReport, SimError> {
    let outcomes = par::map_range(cfg.num_episodes, |i| evaluate_one(policy, cfg, seed::derive_tagged(seed, "eval", i as u64)));
    let episodes = outcomes.into_iter().collect::<Result<Vec<_>, _>>()?;
    let successes = episodes.iter().filter(|e| e.success).count();
    Ok(EvalReport { success_rate: successes as f64 / episodes.len().max(1) as f64, successes, episodes })
}

fn evaluate_one<P: ActionChunker>(policy: &P, cfg: &EvalConfig, ep_seed: u64) -> Result<EpisodeOutcome, SimError> {
    let scene = cfg.distribution.scene(&cfg.layout, cfg.family, ep_seed);
    let mut env = PointEnv::new(&scene, &cfg.layout, cfg.env);
    env.observed = observe_points(&scene, &cfg.layout, &cfg.observation, &cfg.intrinsics, seed::derive_tagged(ep_seed, "observe", 0))?;
    let truth = env.true_state();
    let observation_error =
        truth.points.iter().zip(&env.observed.points).map(|(a, b)| (a - b).norm()).sum::<f64>() / truth.len().max(1) as f64;
    let trace = rollout(policy, &mut env, cfg.aggregation_m).map_err(|e| SimError::InvalidConfig(e.to_string()))?;
    let final_goal_distance = match cfg.family {
        TaskFamily::PickPlace => (env.grasp_point() - env.goal_point).norm(),
        TaskFamily::Reach => (env.effector.midpoint() - env.goal_point).norm(),
    };
    Ok(EpisodeOutcome {
        seed: ep_seed,
        success: trace.success,
        grasped: env.grasped,
        final_goal_distance,
        observation_error,
        executed: cfg.keep_traces.then_some(trace.executed),
    })
}

/// Scripted closed-loop policy that reads the grasp and goal points off the
/// observed state: move to the object, close, carry to the goal, open.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointOracle {
    pub family: TaskFamily,
    pub num_object_points: usize,
    /// World up expressed in the egocentric frame.
    pub up: Vec3,
    /// Height of the grasp point above the goal markers.
    pub goal_height: f64,
    pub max_step: f64,
    pub tolerance: f64,
    pub chunk_len: usize,
}

impl PointOracle {
    pub fn new(family: TaskFamily, layout: &SceneLayout) -> Self {
        let scene = layout.generate_scene(family, 0);
        let up = layout.egocentric_camera().inverse().rotate_vector(&Vec3::z());
        Self {
            family,
            num_object_points: scene.object_points.len(),
            up,
            goal_height: scene.goal_point.z - scene.marker_points[0].z,
            max_step: 0.01,
            tolerance: 1e-3,
            chunk_len: 10,
        }
    }

    fn targets(&self, points: &ObjectState) -> (Vec3, Vec3) {
        let (object, markers) = points.points.split_at(self.num_object_points.min(points.len()));
        let centroid = |p: &[Vec3]| p.iter().sum::<Vec3>() / p.len().max(1) as f64;
        (centroid(object), centroid(markers) + self.up * self.goal_height)
    }

    fn next(&self, a: &UnifiedAction, grasp: &Vec3, goal: &Vec3) -> UnifiedAction {
        let mid = a.midpoint();
        let toward = |target: &Vec3, g: f64| {
            let d = target - mid;
            let step = if d.norm() > self.max_step { d * (self.max_step / d.norm()) } else { d };
            UnifiedAction::new(a.thumb_tip + step, a.index_tip + step, g)
        };
        let near = |p: &Vec3| (p - mid).norm() <= self.tolerance;
        match (self.family, a.is_closed()) {
            (TaskFamily::Reach, _) => toward(goal, GRIPPER_OPEN),
            (TaskFamily::PickPlace, false) if near(goal) => *a,
            (TaskFamily::PickPlace, false) if near(grasp) => UnifiedAction { gripper: GRIPPER_CLOSED, ..*a },
            (TaskFamily::PickPlace, false) => toward(grasp, GRIPPER_OPEN),
            (TaskFamily::PickPlace, true) if near(goal) => UnifiedAction { gripper: GRIPPER_OPEN, ..*a },
            (TaskFamily::PickPlace, true) => toward(goal, GRIPPER_CLOSED),
        }
    }
}

impl ActionChunker for PointOracle {
    fn history_len(&self) -> usize {
        1
    }

    fn chunk_len(&self) -> usize {
        self.chunk_len
    }

    fn predict(&self, points: &ObjectState, history: &HistoryBuffer) -> Result<Vec<UnifiedAction>, PolicyError> {
        let (grasp, goal) = self.targets(points);
        let mut a = *history.latest();
        Ok((0..self.chunk_len)
            .map(|_| {
                a = self.next(&a, &grasp, &goal);
                a
            })
            .collect())
    }
}
