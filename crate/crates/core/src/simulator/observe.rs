use serde::{Deserialize, Serialize};

use crate::geometry::{CameraIntrinsics, Vec3};
use crate::seed;
use crate::triangulation::{calibrate_depth_affine, triangulate_object_from, AffineDepthFit, ObjectState, TriangulationConfig};

use super::{camera_arc, synth_tracks, CameraArcConfig, SceneLayout, SceneSpec, SimError, TrackerNoiseModel};

/// Monocular-depth stand-in: an affine distortion of true depth plus a
/// smooth, nearly square-wave bias that varies across the image.
///
/// `measured = scale·z + shift + amplitude·w(u, v)` with
/// `w = tanh(κ·sin(2πu/λ + φ_u)·sin(2πv/λ + φ_v)) / tanh(κ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DepthWarp {
    pub scale: f64,
    pub shift: f64,
    pub amplitude: f64,
    pub wavelength_px: f64,
    pub sharpness: f64,
    pub phase_u: f64,
    pub phase_v: f64,
    /// Table points (world) used to fit the affine calibration.
    pub tags: Vec<Vec3>,
}

impl Default for DepthWarp {
    fn default() -> Self {
        Self {
            scale: 1.08,
            shift: -0.03,
            amplitude: 0.05,
            wavelength_px: 150.0,
            sharpness: 10.0,
            phase_u: 0.3,
            phase_v: 1.1,
            tags: vec![
                Vec3::new(-0.25, 0.1, 0.0),
                Vec3::new(0.25, 0.1, 0.0),
                Vec3::new(-0.25, 0.5, 0.0),
                Vec3::new(0.25, 0.5, 0.0),
                Vec3::new(0.0, 0.3, 0.0),
            ],
        }
    }
}

impl DepthWarp {
    pub fn bias(&self, u: f64, v: f64) -> f64 {
        let tau = std::f64::consts::TAU;
        let s = (tau * u / self.wavelength_px + self.phase_u).sin() * (tau * v / self.wavelength_px + self.phase_v).sin();
        self.amplitude * (self.sharpness * s).tanh() / self.sharpness.tanh()
    }

    /// Warped depth reading of a camera-frame point.
    pub fn measure(&self, k: &CameraIntrinsics, p_cam: &Vec3) -> Result<f64, SimError> {
        let px = k.project(p_cam)?;
        Ok(self.scale * p_cam.z + self.shift + self.bias(px.u, px.v))
    }
}

/// Calibrated warped-depth state together with the tag fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WarpedObservation {
    pub state: ObjectState,
    pub fit: AffineDepthFit,
}

/// Fits the affine correction on the tags, then unprojects every state
/// point with its corrected depth reading. Everything is in the egocentric
/// camera frame.
pub fn observe_warped(scene: &SceneSpec, layout: &SceneLayout, warp: &DepthWarp, k: &CameraIntrinsics) -> Result<WarpedObservation, SimError> {
    let ego = layout.egocentric_camera().inverse();
    let tags: Vec<Vec3> = warp.tags.iter().map(|t| ego.transform_point(t)).collect();
    let measured = tags.iter().map(|t| warp.measure(k, t)).collect::<Result<Vec<_>, _>>()?;
    let truth: Vec<f64> = tags.iter().map(|t| t.z).collect();
    let fit = calibrate_depth_affine(&measured, &truth)?;
    let points = scene
        .state_in(&layout.egocentric_camera())
        .points
        .iter()
        .map(|p| {
            let px = k.project(p)?;
            Ok(k.unproject(&px, fit.apply(warp.measure(k, p)?))?)
        })
        .collect::<Result<Vec<_>, SimError>>()?;
    Ok(WarpedObservation { state: ObjectState::new(points), fit })
}

/// How the policy perceives object points at the start of a rollout.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ObservationModel {
    /// Ground-truth points (an accurate depth sensor).
    #[default]
    Exact,
    /// Tracks from a head arc, triangulated.
    Triangulated {
        arc: CameraArcConfig,
        tracker: TrackerNoiseModel,
        triangulation: TriangulationConfig,
    },
    /// Calibrated warped monocular depth.
    WarpedDepth(DepthWarp),
}

impl ObservationModel {
    pub fn triangulated() -> Self {
        ObservationModel::Triangulated {
            arc: CameraArcConfig::default(),
            tracker: TrackerNoiseModel::default(),
            triangulation: TriangulationConfig::default(),
        }
    }
}

/// Object points of `scene` in the egocentric frame as seen through `model`.
pub fn observe_points(
    scene: &SceneSpec,
    layout: &SceneLayout,
    model: &ObservationModel,
    k: &CameraIntrinsics,
    seed: u64,
) -> Result<ObjectState, SimError> {
    match model {
        ObservationModel::Exact => Ok(scene.state_in(&layout.egocentric_camera())),
        ObservationModel::Triangulated { arc, tracker, triangulation } => {
            let poses = camera_arc(layout, arc, seed::derive_tagged(seed, "arc", 0))?;
            let tracks = synth_tracks(&scene.state_points(), &poses, k, tracker, seed::derive_tagged(seed, "tracks", 0))?;
            let tri = triangulate_object_from(&tracks, &poses[0], k, triangulation, seed::derive_tagged(seed, "ransac", 0))?;
            Ok(tri.state)
        }
        ObservationModel::WarpedDepth(warp) => Ok(observe_warped(scene, layout, warp, k)?.state),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::{default_intrinsics, generate_scene, TaskFamily};

    fn mean_error(a: &ObjectState, b: &ObjectState) -> f64 {
        a.points.iter().zip(&b.points).map(|(p, q)| (p - q).norm()).sum::<f64>() / a.len() as f64
    }

    #[test]
    fn bias_is_bounded_by_amplitude() {
        let w = DepthWarp::default();
        for i in 0..100 {
            for j in 0..100 {
                assert!(w.bias(14.08 * i as f64, 14.08 * j as f64).abs() <= w.amplitude + 1e-15);
            }
        }
    }

    #[test]
    fn pure_affine_distortion_is_calibrated_away() {
        let layout = SceneLayout::default();
        let k = default_intrinsics();
        let warp = DepthWarp { amplitude: 0.0, ..Default::default() };
        let scene = generate_scene(TaskFamily::PickPlace, 4);
        let obs = observe_warped(&scene, &layout, &warp, &k).unwrap();
        assert!(mean_error(&obs.state, &scene.state_in(&layout.egocentric_camera())) < 1e-9);
        assert!((obs.fit.scale - 1.0 / 1.08).abs() < 1e-9);
    }

    #[test]
    fn warp_survives_calibration() {
        let layout = SceneLayout::default();
        let k = default_intrinsics();
        let model = ObservationModel::WarpedDepth(DepthWarp::default());
        let mut total = 0.0;
        for seed in 0..50 {
            let scene = generate_scene(TaskFamily::PickPlace, seed);
            let obs = observe_points(&scene, &layout, &model, &k, seed).unwrap();
            total += mean_error(&obs, &scene.state_in(&layout.egocentric_camera()));
        }
        assert!(total / 50.0 >= 0.03, "{}", total / 50.0);
    }

    #[test]
    fn triangulated_observation_is_accurate() {
        let layout = SceneLayout::default();
        let k = default_intrinsics();
        let scene = generate_scene(TaskFamily::PickPlace, 8);
        let obs = observe_points(&scene, &layout, &ObservationModel::triangulated(), &k, 8).unwrap();
        assert!(mean_error(&obs, &scene.state_in(&layout.egocentric_camera())) < 0.01);
    }
}
