use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{Mat3, Vec3};
use crate::hand::{GraspDetector, HandKeypoints21, UnifiedAction};
use crate::seed;

use super::hand_model::{hand_keypoints, hand_orientation, palm_pose_at};
use super::{SceneLayout, SceneSpec, SimError, TaskFamily};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExpertConfig {
    pub reach_frames: usize,
    pub pinch_frames: usize,
    pub transport_frames: usize,
    pub release_frames: usize,
    pub hold_frames: usize,
    /// Frames spent withdrawing straight up after the release.
    pub retreat_frames: usize,
    pub retreat_height: f64,
    pub open_gap: f64,
    pub closed_gap: f64,
    /// Peak height of the arc while carrying the object.
    pub lift_height: f64,
    /// Half-widths of the uniform start offset around the robot start point.
    pub start_jitter: Vec3,
    pub grasp_threshold: f64,
}

impl Default for ExpertConfig {
    fn default() -> Self {
        Self {
            reach_frames: 40,
            pinch_frames: 5,
            transport_frames: 40,
            release_frames: 5,
            hold_frames: 3,
            retreat_frames: 8,
            retreat_height: 0.1,
            open_gap: 0.09,
            closed_gap: 0.01,
            lift_height: 0.08,
            start_jitter: Vec3::new(0.2, 0.2, 0.06),
            grasp_threshold: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Reach,
    Pinch,
    Transport,
    Release,
    Retreat,
    Hold,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpertFrame {
    pub phase: Phase,
    /// Fingertip midpoint (world).
    pub pinch: Vec3,
    pub gap: f64,
}

/// Ground-truth demonstrator motion in the world frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertTrajectory {
    pub frames: Vec<ExpertFrame>,
    pub orientation: Mat3,
    pub grasp_threshold: f64,
}

impl ExpertTrajectory {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Frames during which the object is untouched: the reach phase,
    /// including the start frame.
    pub fn static_frames(&self) -> usize {
        self.frames.iter().take_while(|f| f.phase == Phase::Reach).count()
    }

    pub fn keypoints(&self, i: usize) -> HandKeypoints21 {
        let f = &self.frames[i];
        hand_keypoints(&palm_pose_at(&f.pinch, &self.orientation), f.gap)
    }

    /// World-frame actions labelled by thresholding the true tip gap.
    pub fn actions(&self) -> Vec<UnifiedAction> {
        let tips: Vec<(Vec3, Vec3)> = (0..self.len())
            .map(|i| {
                let h = self.keypoints(i);
                (*h.thumb_tip(), *h.index_tip())
            })
            .collect();
        GraspDetector::new(self.grasp_threshold)
            .label(tips.iter().copied())
            .into_iter()
            .zip(tips)
            .map(|(g, (t, i))| UnifiedAction::new(t, i, g))
            .collect()
    }
}

/// Minimum-jerk profile on `[0, 1]`.
fn min_jerk(s: f64) -> f64 {
    s * s * s * (10.0 - 15.0 * s + 6.0 * s * s)
}

/// Reach → pinch → carry → release → retreat → hold for pick-and-place, or reach →
/// hold with an open hand for the reach family. The start point is the robot
/// start jittered by `cfg.start_jitter`.
pub fn scripted_expert(scene: &SceneSpec, layout: &SceneLayout, cfg: &ExpertConfig, seed: u64) -> Result<ExpertTrajectory, SimError> {
    if !scene.workspace.contains(&scene.goal_point) {
        return Err(SimError::UnreachableScene(format!("goal {:?} lies outside the workspace", scene.goal_point.as_slice())));
    }
    if cfg.reach_frames == 0 || !(cfg.closed_gap < cfg.grasp_threshold && cfg.grasp_threshold < cfg.open_gap) {
        return Err(SimError::InvalidConfig("expert needs reach frames and closed < threshold < open gaps".into()));
    }
    let mut rng = seed::rng(seed);
    let j = cfg.start_jitter;
    let start = layout.robot_init() + Vec3::new(sym(&mut rng, j.x), sym(&mut rng, j.y), sym(&mut rng, j.z));

    let target = match scene.family {
        TaskFamily::PickPlace => scene.grasp_point(),
        TaskFamily::Reach => scene.goal_point,
    };
    let mut frames = vec![ExpertFrame { phase: Phase::Reach, pinch: start, gap: cfg.open_gap }];
    for k in 1..=cfg.reach_frames {
        let s = min_jerk(k as f64 / cfg.reach_frames as f64);
        frames.push(ExpertFrame { phase: Phase::Reach, pinch: start + (target - start) * s, gap: cfg.open_gap });
    }
    if scene.family == TaskFamily::PickPlace {
        let span = cfg.open_gap - cfg.closed_gap;
        for k in 1..=cfg.pinch_frames {
            let gap = cfg.open_gap - span * k as f64 / cfg.pinch_frames as f64;
            frames.push(ExpertFrame { phase: Phase::Pinch, pinch: target, gap });
        }
        for k in 1..=cfg.transport_frames {
            let u = k as f64 / cfg.transport_frames as f64;
            let lift = Vec3::z() * (cfg.lift_height * (std::f64::consts::PI * u).sin());
            let pinch = target + (scene.goal_point - target) * min_jerk(u) + lift;
            frames.push(ExpertFrame { phase: Phase::Transport, pinch, gap: cfg.closed_gap });
        }
        for k in 1..=cfg.release_frames {
            let gap = cfg.closed_gap + span * k as f64 / cfg.release_frames as f64;
            frames.push(ExpertFrame { phase: Phase::Release, pinch: scene.goal_point, gap });
        }
        for k in 1..=cfg.retreat_frames {
            let rise = cfg.retreat_height * min_jerk(k as f64 / cfg.retreat_frames as f64);
            frames.push(ExpertFrame { phase: Phase::Retreat, pinch: scene.goal_point + Vec3::z() * rise, gap: cfg.open_gap });
        }
    }
    let last = *frames.last().unwrap();
    frames.extend(std::iter::repeat_n(ExpertFrame { phase: Phase::Hold, ..last }, cfg.hold_frames));

    Ok(ExpertTrajectory { frames, orientation: hand_orientation(), grasp_threshold: cfg.grasp_threshold })
}

fn sym(rng: &mut impl Rng, half: f64) -> f64 {
    if half > 0.0 {
        rng.random_range(-half..=half)
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::generate_scene;

    fn expert(seed: u64) -> (SceneSpec, ExpertTrajectory) {
        let layout = SceneLayout::default();
        let scene = layout.generate_scene(TaskFamily::PickPlace, seed);
        let e = scripted_expert(&scene, &layout, &ExpertConfig::default(), seed).unwrap();
        (scene, e)
    }

    #[test]
    fn ends_at_goal_and_grasps_on_threshold() {
        let (scene, e) = expert(3);
        let released = e.frames.iter().rev().find(|f| f.phase == Phase::Release).unwrap();
        assert!((released.pinch - scene.goal_point).norm() < 1e-12);
        assert!((e.frames.last().unwrap().pinch - scene.goal_point - Vec3::z() * 0.1).norm() < 1e-12);
        let actions = e.actions();
        let closes: Vec<usize> = (1..actions.len()).filter(|&i| actions[i].is_closed() && !actions[i - 1].is_closed()).collect();
        assert_eq!(closes.len(), 1);
        let c = closes[0];
        let gap = |i: usize| (actions[i].thumb_tip - actions[i].index_tip).norm();
        assert!(gap(c) < 0.05 && gap(c - 1) >= 0.05);
        assert!((actions[c].midpoint() - scene.grasp_point()).norm() < 1e-12);
        assert!(!actions.last().unwrap().is_closed());
    }

    #[test]
    fn continuous_with_small_steps() {
        for seed in 0..100 {
            let (_, e) = expert(seed);
            let a = e.actions();
            for w in a.windows(2) {
                assert!((w[1].thumb_tip - w[0].thumb_tip).norm() < 0.05);
                assert!((w[1].index_tip - w[0].index_tip).norm() < 0.05);
            }
        }
    }

    #[test]
    fn reach_phase_is_static_prefix() {
        let (_, e) = expert(1);
        assert_eq!(e.static_frames(), 41);
        assert!(e.frames[41..].iter().all(|f| f.phase != Phase::Reach));
    }

    #[test]
    fn goal_outside_workspace_is_unreachable() {
        let layout = SceneLayout::default();
        let mut scene = generate_scene(TaskFamily::PickPlace, 0);
        scene.goal_point.z = 5.0;
        assert!(matches!(scripted_expert(&scene, &layout, &ExpertConfig::default(), 0), Err(SimError::UnreachableScene(_))));
    }

    #[test]
    fn reach_family_never_closes() {
        let layout = SceneLayout::default();
        let scene = generate_scene(TaskFamily::Reach, 2);
        let e = scripted_expert(&scene, &layout, &ExpertConfig::default(), 2).unwrap();
        assert!(e.actions().iter().all(|a| !a.is_closed()));
        assert!((e.frames.last().unwrap().pinch - scene.goal_point).norm() < 1e-12);
    }
}
