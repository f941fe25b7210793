//! Static object-point triangulation from a moving camera.
//!
//! Per tracked point the pipeline is: pairwise epipolar filtering of frames,
//! RANSAC over minimal DLT subsets, then a Huber-robust refinement with a soft
//! penalty on depth inside a bounding box. [`triangulate_object`] runs it for
//! every point of a demonstration and expresses the result in the first
//! camera frame.

mod depth;
mod filter;
mod ransac;
mod refine;

pub use depth::{calibrate_depth_affine, AffineDepthFit};
pub use filter::filter_epipolar;
pub use ransac::{dlt_triangulate, ransac_triangulate};
pub use refine::{huber, refine_huber_depth, robust_objective};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{CameraIntrinsics, EpipolarMetric, GeometryError, Pixel, RigidTransform, Vec3};
use crate::{par, seed};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TriangulationError {
    #[error("track has {0} observations, at least 2 are required")]
    TooFewFrames(usize),
    #[error("{have} inlier frames, RANSAC needs at least {need}")]
    InsufficientInliers { have: usize, need: usize },
    #[error("no RANSAC candidate is supported by two or more frames")]
    NoValidCandidate,
    #[error("refinement was clamped to the bounds in {projected} of {iterations} iterations")]
    DivergedOutsideBounds { projected: usize, iterations: usize },
    #[error("depth calibration is degenerate (estimated depth variance {0:e})")]
    DegenerateFit(f64),
    #[error("invalid track: {0}")]
    InvalidTrack(String),
    #[error("invalid triangulation config: {0}")]
    InvalidConfig(String),
    #[error("no tracks to triangulate")]
    NoTracks,
    #[error("triangulation failed for point ids {}", .0.iter().map(|(id, _)| id.to_string()).collect::<Vec<_>>().join(", "))]
    PointsFailed(Vec<(u32, TriangulationError)>),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub frame_index: usize,
    pub pixel: Pixel,
}

/// A tracked 2D point and the camera pose of every frame it was observed in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointTrack {
    point_id: u32,
    observations: Vec<Observation>,
    poses: Vec<RigidTransform>,
}

impl PointTrack {
    pub fn new(point_id: u32, observations: Vec<Observation>, poses: Vec<RigidTransform>) -> Result<Self, TriangulationError> {
        if observations.len() != poses.len() {
            return Err(TriangulationError::InvalidTrack(format!(
                "{} observations but {} poses",
                observations.len(),
                poses.len()
            )));
        }
        if observations.windows(2).any(|w| w[1].frame_index <= w[0].frame_index) {
            return Err(TriangulationError::InvalidTrack("frame indices must be strictly increasing".into()));
        }
        if observations.iter().any(|o| !o.pixel.is_finite()) {
            return Err(TriangulationError::InvalidTrack("non-finite pixel".into()));
        }
        Ok(Self { point_id, observations, poses })
    }

    pub fn point_id(&self) -> u32 {
        self.point_id
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn poses(&self) -> &[RigidTransform] {
        &self.poses
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn pixel(&self, pos: usize) -> &Pixel {
        &self.observations[pos].pixel
    }

    /// Re-expresses every pose relative to `reference` (camera-to-world), so
    /// that triangulated points come out in the reference camera frame.
    pub fn rebased(&self, reference: &RigidTransform) -> PointTrack {
        let inv = reference.inverse();
        PointTrack {
            point_id: self.point_id,
            observations: self.observations.clone(),
            poses: self.poses.iter().map(|p| inv.compose(p)).collect(),
        }
    }

    /// World-to-camera transform of every observation.
    pub(crate) fn extrinsics(&self) -> Vec<RigidTransform> {
        self.poses.iter().map(RigidTransform::inverse).collect()
    }

    pub(crate) fn require_two(&self) -> Result<(), TriangulationError> {
        if self.len() < 2 {
            Err(TriangulationError::TooFewFrames(self.len()))
        } else {
            Ok(())
        }
    }
}

/// Axis-aligned box constraint on the triangulated point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub low: [f64; 3],
    pub high: [f64; 3],
}

impl Bounds {
    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|i| p[i] >= self.low[i] && p[i] <= self.high[i])
    }

    pub fn clamp(&self, p: &Vec3) -> Vec3 {
        Vec3::new(
            p.x.clamp(self.low[0], self.high[0]),
            p.y.clamp(self.low[1], self.high[1]),
            p.z.clamp(self.low[2], self.high[2]),
        )
    }
}

impl Default for Bounds {
    fn default() -> Self {
        Self {
            low: [-2.0, -2.0, 0.05],
            high: [2.0, 2.0, 2.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TriangulationConfig {
    /// Epipolar consistency threshold in pixels.
    pub epsilon: f64,
    pub epipolar_metric: EpipolarMetric,
    /// Number of other frames a frame must agree with to be kept.
    pub min_consistent_views: usize,
    pub ransac_iters: usize,
    pub ransac_subset_k: usize,
    /// Reprojection threshold (pixels) for RANSAC support.
    pub inlier_tau: f64,
    /// Huber crossover in pixels.
    pub huber_delta: f64,
    /// Weight of the `q_z` depth penalty.
    pub depth_lambda: f64,
    pub bounds: Bounds,
    pub max_refine_iters: usize,
}

impl Default for TriangulationConfig {
    fn default() -> Self {
        Self {
            epsilon: 2.0,
            epipolar_metric: EpipolarMetric::Sampson,
            min_consistent_views: 3,
            ransac_iters: 256,
            ransac_subset_k: 2,
            inlier_tau: 4.0,
            huber_delta: 2.0,
            depth_lambda: 0.1,
            bounds: Bounds::default(),
            max_refine_iters: 100,
        }
    }
}

impl TriangulationConfig {
    pub fn validate(&self) -> Result<(), TriangulationError> {
        let bad = |msg: &str| Err(TriangulationError::InvalidConfig(msg.to_string()));
        if !(self.epsilon > 0.0) {
            return bad("epsilon must be > 0");
        }
        if !(self.inlier_tau > 0.0) {
            return bad("inlier_tau must be > 0");
        }
        if !(self.huber_delta > 0.0) {
            return bad("huber_delta must be > 0");
        }
        if !(self.depth_lambda >= 0.0) {
            return bad("depth_lambda must be >= 0");
        }
        if self.ransac_subset_k < 2 {
            return bad("ransac_subset_k must be >= 2");
        }
        if self.min_consistent_views < 1 {
            return bad("min_consistent_views must be >= 1");
        }
        if !(self.bounds.low[2] > 0.0) {
            return bad("bounds must keep z > 0");
        }
        if (0..3).any(|i| !(self.bounds.low[i] < self.bounds.high[i])) {
            return bad("bounds must have low < high on every axis");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriangulationResult {
    pub point: Vec3,
    /// Frame indices used in the refinement.
    pub inlier_frames: Vec<usize>,
    pub mean_inlier_reproj_error: f64,
    pub converged: bool,
}

/// Ordered object points in the first egocentric frame.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ObjectState {
    pub points: Vec<Vec3>,
}

impl ObjectState {
    pub fn new(points: Vec<Vec3>) -> Self {
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn flat(&self) -> Vec<f64> {
        self.points.iter().flat_map(|p| [p.x, p.y, p.z]).collect()
    }

    pub fn from_flat(v: &[f64]) -> Option<Self> {
        if !v.len().is_multiple_of(3) {
            return None;
        }
        Some(Self {
            points: v.chunks_exact(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect(),
        })
    }
}

/// Reprojection error of `q` in the camera with world-to-camera `extrinsic`;
/// infinite when the point is behind the camera.
pub fn reprojection_error(k: &CameraIntrinsics, extrinsic: &RigidTransform, q: &Vec3, observed: &Pixel) -> f64 {
    match k.project(&extrinsic.transform_point(q)) {
        Ok(px) => px.distance(observed),
        Err(_) => f64::INFINITY,
    }
}

/// Epipolar filtering, RANSAC and refinement for a single track.
pub fn triangulate_point(
    track: &PointTrack,
    k: &CameraIntrinsics,
    cfg: &TriangulationConfig,
    seed: u64,
) -> Result<TriangulationResult, TriangulationError> {
    cfg.validate()?;
    let inliers = filter_epipolar(track, k, cfg)?;
    let q0 = ransac_triangulate(track, &inliers, k, cfg, seed)?;
    refine_huber_depth(&q0, track, &inliers, k, cfg)
}

/// Triangulated object with per-point diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectTriangulation {
    pub state: ObjectState,
    pub point_ids: Vec<u32>,
    pub per_point: Vec<TriangulationResult>,
}

impl ObjectTriangulation {
    /// Mean inlier reprojection error over all points, weighted by inlier count.
    pub fn mean_inlier_reproj_error(&self) -> f64 {
        let (sum, n) = self.per_point.iter().fold((0.0, 0usize), |(s, n), r| {
            (s + r.mean_inlier_reproj_error * r.inlier_frames.len() as f64, n + r.inlier_frames.len())
        });
        if n == 0 {
            0.0
        } else {
            sum / n as f64
        }
    }
}

/// Triangulates every track in the frame of the earliest camera pose and
/// orders the points by `point_id`.
pub fn triangulate_object(
    tracks: &[PointTrack],
    k: &CameraIntrinsics,
    cfg: &TriangulationConfig,
    seed: u64,
) -> Result<ObjectTriangulation, TriangulationError> {
    let reference = tracks
        .iter()
        .filter_map(|t| t.observations.first().map(|o| (o.frame_index, t.poses[0])))
        .min_by_key(|(f, _)| *f)
        .map(|(_, p)| p)
        .ok_or(TriangulationError::NoTracks)?;
    triangulate_object_from(tracks, &reference, k, cfg, seed)
}

/// Like [`triangulate_object`], but in the frame of an explicit
/// camera-to-world `reference` pose.
pub fn triangulate_object_from(
    tracks: &[PointTrack],
    reference: &RigidTransform,
    k: &CameraIntrinsics,
    cfg: &TriangulationConfig,
    seed: u64,
) -> Result<ObjectTriangulation, TriangulationError> {
    cfg.validate()?;
    if tracks.is_empty() {
        return Err(TriangulationError::NoTracks);
    }
    let mut order: Vec<&PointTrack> = tracks.iter().collect();
    order.sort_by_key(|t| t.point_id);
    if order.windows(2).any(|w| w[0].point_id == w[1].point_id) {
        return Err(TriangulationError::InvalidTrack("duplicate point ids".into()));
    }

    let results = par::map(&order, |track| {
        let rebased = track.rebased(reference);
        triangulate_point(&rebased, k, cfg, seed::derive(seed, track.point_id as u64))
    });

    let mut failed = Vec::new();
    let mut per_point = Vec::with_capacity(order.len());
    for (track, res) in order.iter().zip(results) {
        match res {
            Ok(r) => per_point.push(r),
            Err(e) => failed.push((track.point_id, e)),
        }
    }
    if !failed.is_empty() {
        return Err(TriangulationError::PointsFailed(failed));
    }
    Ok(ObjectTriangulation {
        state: ObjectState::new(per_point.iter().map(|r| r.point).collect()),
        point_ids: order.iter().map(|t| t.point_id).collect(),
        per_point,
    })
}

#[cfg(test)]
pub(crate) mod testutil {
    use super::*;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    pub fn k() -> CameraIntrinsics {
        CameraIntrinsics::centered(700.0, 1408).unwrap()
    }

    /// Camera-to-reference poses on a sideways arc of `baseline` meters,
    /// fixating `target`; the first pose is the identity.
    pub fn arc_poses(n: usize, baseline: f64, target: Vec3) -> Vec<RigidTransform> {
        let up = Vec3::new(0.0, -1.0, 0.0);
        let first = RigidTransform::look_at(Vec3::zeros(), target, up);
        let to_ref = first.inverse();
        (0..n)
            .map(|i| {
                let s = i as f64 / (n - 1) as f64;
                let eye = Vec3::new(baseline * s, 0.03 * (std::f64::consts::PI * s).sin(), 0.0);
                to_ref.compose(&RigidTransform::look_at(eye, target, up))
            })
            .collect()
    }

    pub fn track_of(point: Vec3, poses: &[RigidTransform], sigma: f64, rng: &mut impl Rng) -> PointTrack {
        let k = k();
        let noise = Normal::new(0.0, sigma.max(1e-300)).unwrap();
        let obs = poses
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let mut px = k.project(&p.inverse().transform_point(&point)).unwrap();
                if sigma > 0.0 {
                    px.u += noise.sample(rng);
                    px.v += noise.sample(rng);
                }
                Observation { frame_index: i, pixel: px }
            })
            .collect();
        PointTrack::new(0, obs, poses.to_vec()).unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::testutil::*;
    use super::*;
    use crate::seed;
    use rand::Rng;

    #[test]
    fn track_validation() {
        let p = RigidTransform::identity();
        let o = |f| Observation { frame_index: f, pixel: Pixel::new(1.0, 1.0) };
        assert!(PointTrack::new(0, vec![o(0), o(0)], vec![p, p]).is_err());
        assert!(PointTrack::new(0, vec![o(0), o(1)], vec![p]).is_err());
        assert!(PointTrack::new(0, vec![o(0), o(1)], vec![p, p]).is_ok());
    }

    #[test]
    fn config_validation() {
        assert!(TriangulationConfig::default().validate().is_ok());
        let mut c = TriangulationConfig::default();
        c.bounds.low[2] = 0.0;
        assert!(c.validate().is_err());
        let c = TriangulationConfig { ransac_subset_k: 1, ..Default::default() };
        assert!(c.validate().is_err());
    }

    #[test]
    fn noiseless_point_recovered() {
        let truth = Vec3::new(0.1, -0.05, 0.6);
        let poses = arc_poses(30, 0.3, Vec3::new(0.0, 0.0, 0.6));
        let mut rng = seed::rng(1);
        let track = track_of(truth, &poses, 0.0, &mut rng);
        let cfg = TriangulationConfig { depth_lambda: 0.0, ..Default::default() };
        let r = triangulate_point(&track, &k(), &cfg, 3).unwrap();
        assert!((r.point - truth).norm() < 1e-6, "{:?}", r.point);
        assert!(r.mean_inlier_reproj_error < 1e-6);
        assert_eq!(r.inlier_frames.len(), 30);
    }

    #[test]
    fn five_noiseless_tracks_in_first_frame() {
        // World-frame poses with a non-identity first camera; results must be
        // expressed in that first camera's frame.
        let world_from_first = RigidTransform::from_translation(Vec3::new(0.3, -0.2, 1.0))
            * RigidTransform::from_axis_angle(Vec3::new(0.2, 1.0, 0.1), 0.7);
        let rel = arc_poses(30, 0.3, Vec3::new(0.0, 0.0, 0.5));
        let world: Vec<_> = rel.iter().map(|p| world_from_first.compose(p)).collect();
        let truths: Vec<Vec3> = (0..5).map(|i| Vec3::new(-0.08 + 0.04 * i as f64, 0.02 * i as f64 - 0.04, 0.45 + 0.02 * i as f64)).collect();
        let k = k();
        let tracks: Vec<_> = truths
            .iter()
            .enumerate()
            .rev()
            .map(|(i, q)| {
                let qw = world_from_first.transform_point(q);
                let obs = world
                    .iter()
                    .enumerate()
                    .map(|(f, p)| Observation { frame_index: f, pixel: k.project(&p.inverse().transform_point(&qw)).unwrap() })
                    .collect();
                PointTrack::new(i as u32, obs, world.clone()).unwrap()
            })
            .collect();
        let obj = triangulate_object(&tracks, &k, &TriangulationConfig::default(), 11).unwrap();
        assert_eq!(obj.point_ids, vec![0, 1, 2, 3, 4]);
        for (p, t) in obj.state.points.iter().zip(&truths) {
            assert!((p - t).norm() < 1e-6, "{p} vs {t}");
        }
        assert!(obj.mean_inlier_reproj_error() < 1e-3, "{}", obj.mean_inlier_reproj_error());
    }

    #[test]
    fn empty_track_list_is_an_error() {
        assert!(matches!(
            triangulate_object(&[], &k(), &TriangulationConfig::default(), 0),
            Err(TriangulationError::NoTracks)
        ));
    }

    #[test]
    fn failures_name_the_point() {
        let poses = arc_poses(30, 0.3, Vec3::new(0.0, 0.0, 0.5));
        let mut rng = seed::rng(2);
        let good = track_of(Vec3::new(0.0, 0.0, 0.5), &poses, 0.0, &mut rng);
        let bad_obs: Vec<_> = (0..30)
            .map(|f| Observation { frame_index: f, pixel: Pixel::new(rng.random_range(0.0..1408.0), rng.random_range(0.0..1408.0)) })
            .collect();
        let bad = PointTrack::new(7, bad_obs, poses.clone()).unwrap();
        match triangulate_object(&[good, bad], &k(), &TriangulationConfig::default(), 0) {
            Err(TriangulationError::PointsFailed(v)) => {
                assert_eq!(v.len(), 1);
                assert_eq!(v[0].0, 7);
            }
            other => panic!("expected PointsFailed, got {other:?}"),
        }
    }

    #[test]
    fn inlier_coverage_with_two_pixel_noise() {
        let mut rng = seed::rng(5);
        let poses = arc_poses(30, 0.3, Vec3::new(0.0, 0.0, 0.5));
        for trial in 0..20 {
            let truth = Vec3::new(rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), rng.random_range(0.4..0.6));
            let track = track_of(truth, &poses, 2.0, &mut rng);
            let r = triangulate_point(&track, &k(), &TriangulationConfig::default(), trial).unwrap();
            assert!(r.inlier_frames.len() * 10 >= 9 * 30, "trial {trial}: {} inliers", r.inlier_frames.len());
        }
    }
}
