use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{RigidTransform, Vec3};
use crate::seed;
use crate::triangulation::ObjectState;

/// Axis-aligned box; a zero-thickness axis pins that coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn new(min: Vec3, max: Vec3) -> Self {
        Self { min, max }
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] - 1e-12 && p[i] <= self.max[i] + 1e-12)
    }

    /// Whether the `x, y` footprint contains `p`.
    pub fn contains_xy(&self, p: &Vec3) -> bool {
        (0..2).all(|i| p[i] >= self.min[i] - 1e-12 && p[i] <= self.max[i] + 1e-12)
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Vec3 {
        Vec3::from_fn(|i, _| {
            if self.max[i] > self.min[i] {
                rng.random_range(self.min[i]..=self.max[i])
            } else {
                self.min[i]
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskFamily {
    /// Pick the object up and put it down on the goal markers.
    #[default]
    PickPlace,
    /// Move the open hand to the goal; nothing needs to be grasped.
    Reach,
}

/// Fixed geometry shared by every scene: where the head camera starts, the
/// reachable workspace and the sub-volume that training scenes come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneLayout {
    pub head_eye: Vec3,
    /// Table-surface centre of the workspace; the head camera looks at it.
    pub workspace_center: Vec3,
    pub workspace: Aabb,
    /// Footprint for object and goal positions of in-volume scenes.
    pub training_volume: Aabb,
    /// Robot start height above the workspace centre.
    pub init_height: f64,
    /// Minimum distance between the grasp point and the goal point.
    pub min_goal_distance: f64,
    /// Range of the translation that moves a scene out of the training volume.
    pub out_of_volume_shift: (f64, f64),
}

impl Default for SceneLayout {
    fn default() -> Self {
        Self {
            head_eye: Vec3::new(0.0, 0.0, 0.42),
            workspace_center: Vec3::new(0.0, 0.3, 0.0),
            workspace: Aabb::new(Vec3::new(-0.6, -0.2, 0.0), Vec3::new(0.6, 0.9, 0.6)),
            training_volume: Aabb::new(Vec3::new(-0.12, 0.18, 0.0), Vec3::new(0.12, 0.42, 0.0)),
            init_height: 0.3,
            min_goal_distance: 0.1,
            out_of_volume_shift: (0.2, 0.4),
        }
    }
}

/// Object template in its own frame: four points of a small block.
const OBJECT_TEMPLATE: [[f64; 3]; 4] = [[0.03, 0.0, 0.01], [-0.03, 0.0, 0.01], [0.0, 0.025, 0.01], [0.0, -0.025, 0.04]];
/// Goal markers lying flat on the table around the goal footprint.
const MARKER_TEMPLATE: [[f64; 3]; 3] = [[0.045, 0.0, 0.0], [-0.025, 0.04, 0.0], [-0.025, -0.04, 0.0]];

fn template_height() -> f64 {
    OBJECT_TEMPLATE.iter().map(|p| p[2]).sum::<f64>() / OBJECT_TEMPLATE.len() as f64
}

fn place(template: &[[f64; 3]], center: Vec3, yaw: f64) -> Vec<Vec3> {
    let pose = RigidTransform::from_translation(center).compose(&RigidTransform::from_axis_angle(Vec3::z(), yaw));
    template.iter().map(|p| pose.transform_point(&Vec3::from(*p))).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub family: TaskFamily,
    /// Points of the movable object (world frame).
    pub object_points: Vec<Vec3>,
    /// Static goal markers (world frame).
    pub marker_points: Vec<Vec3>,
    /// Where the grasp point has to end up.
    pub goal_point: Vec3,
    pub workspace: Aabb,
    pub seed: u64,
}

impl SceneSpec {
    /// Centroid of the movable object; the hand pinches here.
    pub fn grasp_point(&self) -> Vec3 {
        self.object_points.iter().sum::<Vec3>() / self.object_points.len() as f64
    }

    /// Every observed point: object first, then goal markers.
    pub fn state_points(&self) -> Vec<Vec3> {
        self.object_points.iter().chain(&self.marker_points).copied().collect()
    }

    pub fn num_points(&self) -> usize {
        self.object_points.len() + self.marker_points.len()
    }

    pub fn translated(&self, offset: Vec3) -> SceneSpec {
        SceneSpec {
            object_points: self.object_points.iter().map(|p| p + offset).collect(),
            marker_points: self.marker_points.iter().map(|p| p + offset).collect(),
            goal_point: self.goal_point + offset,
            ..self.clone()
        }
    }

    pub fn is_inside_workspace(&self) -> bool {
        self.state_points().iter().chain(std::iter::once(&self.goal_point)).all(|p| self.workspace.contains(p))
    }

    /// State points in the frame whose camera-to-world pose is `frame`.
    pub fn state_in(&self, frame: &RigidTransform) -> ObjectState {
        let inv = frame.inverse();
        ObjectState::new(self.state_points().iter().map(|p| inv.transform_point(p)).collect())
    }
}

impl SceneLayout {
    /// Pose of the first head camera, i.e. the egocentric frame.
    pub fn egocentric_camera(&self) -> RigidTransform {
        RigidTransform::look_at(self.head_eye, self.workspace_center, Vec3::z())
    }

    /// Tip midpoint of the robot at the start of a rollout (world frame).
    pub fn robot_init(&self) -> Vec3 {
        self.workspace_center + Vec3::new(0.0, 0.0, self.init_height)
    }

    /// A scene with object and goal inside the training volume.
    pub fn generate_scene(&self, family: TaskFamily, seed: u64) -> SceneSpec {
        let mut rng = seed::rng(seed);
        let h = template_height();
        loop {
            let center = self.training_volume.sample(&mut rng);
            let yaw = rng.random_range(0.0..std::f64::consts::TAU);
            let object_points = place(&OBJECT_TEMPLATE, center, yaw);
            let goal_table = self.training_volume.sample(&mut rng);
            let marker_yaw = rng.random_range(0.0..std::f64::consts::TAU);
            let marker_points = place(&MARKER_TEMPLATE, goal_table, marker_yaw);
            let goal_point = goal_table + Vec3::new(0.0, 0.0, h);
            let scene = SceneSpec { family, object_points, marker_points, goal_point, workspace: self.workspace, seed };
            if (scene.grasp_point() - goal_point).norm() >= self.min_goal_distance && scene.is_inside_workspace() {
                return scene;
            }
        }
    }

    /// An in-volume scene translated by 0.2–0.4 m along `±x` or `+y` so that
    /// the object leaves the training footprint.
    pub fn out_of_volume_scene(&self, family: TaskFamily, seed: u64) -> SceneSpec {
        let mut rng = seed::rng(seed::derive_tagged(seed, "out_of_volume", 0));
        let base = self.generate_scene(family, seed);
        let dirs = [Vec3::x(), -Vec3::x(), Vec3::y()];
        loop {
            let dir = dirs[rng.random_range(0..dirs.len())];
            let shift = rng.random_range(self.out_of_volume_shift.0..=self.out_of_volume_shift.1);
            let scene = base.translated(dir * shift);
            if !self.training_volume.contains_xy(&scene.grasp_point()) && scene.is_inside_workspace() {
                return scene;
            }
        }
    }
}

/// In-volume scene under the default layout.
pub fn generate_scene(family: TaskFamily, seed: u64) -> SceneSpec {
    SceneLayout::default().generate_scene(family, seed)
}
