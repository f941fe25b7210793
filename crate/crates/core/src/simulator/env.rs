use serde::{Deserialize, Serialize};

use crate::geometry::{RigidTransform, Vec3};
use crate::hand::{UnifiedAction, GRIPPER_OPEN};
use crate::policy::Environment;
use crate::triangulation::ObjectState;

use super::hand_model::{hand_keypoints, palm_pose_at};
use super::{SceneLayout, SceneSpec, TaskFamily};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    pub attach_radius: f64,
    pub success_radius: f64,
    pub horizon: usize,
    /// Tip gap of the robot's open gripper at the start.
    pub init_gap: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self { attach_radius: 0.02, success_radius: 0.02, horizon: 200, init_gap: 0.09 }
    }
}

/// Kinematic point world in the egocentric frame. The end effector
/// teleports to each commanded action; the object follows it rigidly while
/// attached.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointEnv {
    pub config: EnvConfig,
    pub family: TaskFamily,
    pub object_points: Vec<Vec3>,
    pub marker_points: Vec<Vec3>,
    pub goal_point: Vec3,
    pub effector: UnifiedAction,
    pub initial: UnifiedAction,
    pub attached: bool,
    pub grasped: bool,
    pub steps: usize,
    /// What the policy is shown; set by the observation model.
    pub observed: ObjectState,
}

impl PointEnv {
    /// Places `scene` in the egocentric frame with the robot open 30 cm above
    /// the workspace centre. The observation defaults to the exact points.
    pub fn new(scene: &SceneSpec, layout: &SceneLayout, config: EnvConfig) -> Self {
        let ego = layout.egocentric_camera().inverse();
        let to_ego = |p: &Vec3| ego.transform_point(p);
        let h = hand_keypoints(&palm_pose_at(&layout.robot_init(), &super::hand_orientation()), config.init_gap);
        let initial = UnifiedAction::new(*h.thumb_tip(), *h.index_tip(), GRIPPER_OPEN).transformed(&ego);
        let object_points: Vec<Vec3> = scene.object_points.iter().map(to_ego).collect();
        let marker_points: Vec<Vec3> = scene.marker_points.iter().map(to_ego).collect();
        let observed = ObjectState::new(object_points.iter().chain(&marker_points).copied().collect());
        Self {
            config,
            family: scene.family,
            object_points,
            marker_points,
            goal_point: to_ego(&scene.goal_point),
            effector: initial,
            initial,
            attached: false,
            grasped: false,
            steps: 0,
            observed,
        }
    }

    pub fn grasp_point(&self) -> Vec3 {
        self.object_points.iter().sum::<Vec3>() / self.object_points.len() as f64
    }

    pub fn true_state(&self) -> ObjectState {
        ObjectState::new(self.object_points.iter().chain(&self.marker_points).copied().collect())
    }

    pub fn step(&mut self, action: &UnifiedAction) {
        let was_closed = self.effector.is_closed();
        let delta = action.midpoint() - self.effector.midpoint();
        if self.attached {
            let shift = RigidTransform::from_translation(delta);
            self.object_points.iter_mut().for_each(|p| *p = shift.transform_point(p));
            if !action.is_closed() {
                self.attached = false;
            }
        }
        if !was_closed
            && action.is_closed()
            && self.family == TaskFamily::PickPlace
            && (action.midpoint() - self.grasp_point()).norm() <= self.config.attach_radius
        {
            self.attached = true;
            self.grasped = true;
        }
        self.effector = *action;
        self.steps += 1;
    }

    pub fn is_success(&self) -> bool {
        if self.effector.is_closed() {
            return false;
        }
        match self.family {
            TaskFamily::PickPlace => {
                self.grasped && !self.attached && (self.grasp_point() - self.goal_point).norm() <= self.config.success_radius
            }
            TaskFamily::Reach => (self.effector.midpoint() - self.goal_point).norm() <= self.config.success_radius,
        }
    }
}

/// Functional form of [`PointEnv::step`].
pub fn env_step(env: &PointEnv, action: &UnifiedAction) -> PointEnv {
    let mut next = env.clone();
    next.step(action);
    next
}

pub fn env_success(env: &PointEnv) -> bool {
    env.is_success()
}

impl Environment for PointEnv {
    fn observe(&self) -> ObjectState {
        self.observed.clone()
    }

    fn initial_action(&self) -> UnifiedAction {
        self.initial
    }

    fn execute(&mut self, action: &UnifiedAction) {
        self.step(action);
    }

    fn horizon(&self) -> usize {
        self.config.horizon
    }

    fn success(&self) -> bool {
        self.is_success()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hand::GRIPPER_CLOSED;
    use crate::simulator::{generate_scene, scripted_expert, ExpertConfig};

    fn env(seed: u64) -> PointEnv {
        PointEnv::new(&generate_scene(TaskFamily::PickPlace, seed), &SceneLayout::default(), EnvConfig::default())
    }

    fn at(mid: Vec3, g: f64) -> UnifiedAction {
        UnifiedAction::new(mid + Vec3::new(0.005, 0.0, 0.0), mid - Vec3::new(0.005, 0.0, 0.0), g)
    }

    #[test]
    fn attach_radius() {
        let e = env(0);
        let near = e.grasp_point() + Vec3::new(0.001, 0.0, 0.0);
        let open = env_step(&e, &at(near, GRIPPER_OPEN));
        assert!(env_step(&open, &at(near, GRIPPER_CLOSED)).attached);
        let far = e.grasp_point() + Vec3::new(0.1, 0.0, 0.0);
        assert!(!env_step(&env_step(&e, &at(far, GRIPPER_OPEN)), &at(far, GRIPPER_CLOSED)).attached);
    }

    #[test]
    fn attached_object_follows_deltas() {
        let mut e = env(1);
        let g = e.grasp_point();
        e.step(&at(g, GRIPPER_OPEN));
        e.step(&at(g, GRIPPER_CLOSED));
        let before = e.object_points.clone();
        let d = Vec3::new(0.03, -0.02, 0.05);
        e.step(&at(g + d, GRIPPER_CLOSED));
        for (a, b) in before.iter().zip(&e.object_points) {
            assert!((b - a - d).norm() < 1e-12);
        }
        e.step(&at(g + d + d, GRIPPER_OPEN));
        assert!(!e.attached);
        let released = e.object_points.clone();
        e.step(&at(g, GRIPPER_OPEN));
        assert_eq!(released, e.object_points);
    }

    #[test]
    fn expert_replay_succeeds() {
        let layout = SceneLayout::default();
        for seed in 0..100 {
            let scene = layout.generate_scene(TaskFamily::PickPlace, seed);
            let expert = scripted_expert(&scene, &layout, &ExpertConfig::default(), seed).unwrap();
            let ego = layout.egocentric_camera().inverse();
            let mut e = PointEnv::new(&scene, &layout, EnvConfig::default());
            for a in expert.actions() {
                e.step(&a.transformed(&ego));
            }
            assert!(e.is_success(), "seed {seed}");
        }
    }

    #[test]
    fn idle_policy_fails() {
        let mut e = env(2);
        let zero = UnifiedAction::from_slice(&[0.0; 7]);
        for _ in 0..200 {
            e.step(&zero);
        }
        assert!(!e.is_success());
        // Holding still at the start also fails.
        let mut e = env(2);
        let init = e.initial;
        for _ in 0..200 {
            e.step(&init);
        }
        assert!(!e.is_success());
    }
}
