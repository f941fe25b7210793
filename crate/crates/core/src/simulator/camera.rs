use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::geometry::{project_world, CameraIntrinsics, Pixel, RigidTransform, Vec3};
use crate::seed;
use crate::triangulation::{Observation, PointTrack};

use super::{SceneLayout, SimError};

/// Sideways head motion while the object is static.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CameraArcConfig {
    pub num_frames: usize,
    /// Distance between the first and last camera centres (meters).
    pub baseline: f64,
    /// Replace the baseline by `degenerate_baseline`.
    pub degenerate: bool,
    pub degenerate_baseline: f64,
    /// Maximum vertical slope of the motion direction.
    pub max_tilt: f64,
}

impl Default for CameraArcConfig {
    fn default() -> Self {
        Self { num_frames: 41, baseline: 0.35, degenerate: false, degenerate_baseline: 0.0008, max_tilt: 0.2 }
    }
}

impl CameraArcConfig {
    pub fn effective_baseline(&self) -> f64 {
        if self.degenerate {
            self.degenerate_baseline
        } else {
            self.baseline
        }
    }
}

/// Smooth arc starting at the egocentric head pose and translating sideways
/// (left or right, slightly tilted) with smoothstep timing while fixating the
/// workspace centre.
pub fn camera_arc(layout: &SceneLayout, cfg: &CameraArcConfig, seed: u64) -> Result<Vec<RigidTransform>, SimError> {
    if cfg.num_frames < 2 {
        return Err(SimError::InvalidConfig("camera arc needs at least two frames".into()));
    }
    let mut rng = seed::rng(seed);
    let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    let tilt = if cfg.max_tilt > 0.0 { rng.random_range(-cfg.max_tilt..=cfg.max_tilt) } else { 0.0 };
    let dir = Vec3::new(side, 0.0, tilt).normalize();
    let b = cfg.effective_baseline();
    Ok((0..cfg.num_frames)
        .map(|i| {
            let s = i as f64 / (cfg.num_frames - 1) as f64;
            let eye = layout.head_eye + dir * (b * s * s * (3.0 - 2.0 * s));
            RigidTransform::look_at(eye, layout.workspace_center, Vec3::z())
        })
        .collect())
}

/// 2D tracker error model. Observations follow
/// `u_t = α·u_{t−1} + (1 − α)·u_t^true + N(0, σ²)`; with probability
/// `outlier_rate` the reported pixel is replaced by a uniform draw within
/// `outlier_px_range` of the truth (clipped to the image).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackerNoiseModel {
    pub pixel_sigma: f64,
    pub lag_alpha: f64,
    pub outlier_rate: f64,
    pub outlier_px_range: f64,
}

impl Default for TrackerNoiseModel {
    fn default() -> Self {
        Self { pixel_sigma: 1.5, lag_alpha: 0.2, outlier_rate: 0.05, outlier_px_range: 200.0 }
    }
}

impl TrackerNoiseModel {
    pub fn zero() -> Self {
        Self { pixel_sigma: 0.0, lag_alpha: 0.0, outlier_rate: 0.0, outlier_px_range: 200.0 }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let ok = self.pixel_sigma >= 0.0
            && (0.0..1.0).contains(&self.lag_alpha)
            && (0.0..1.0).contains(&self.outlier_rate)
            && self.outlier_px_range > 0.0;
        if ok {
            Ok(())
        } else {
            Err(SimError::InvalidConfig("tracker noise: need σ ≥ 0, α and outlier rate in [0, 1), positive outlier range".into()))
        }
    }
}

/// One track per world point over the camera poses `arc`; point ids follow
/// the input order. Outliers do not feed back into the lag state.
pub fn synth_tracks(
    points: &[Vec3],
    arc: &[RigidTransform],
    k: &CameraIntrinsics,
    noise: &TrackerNoiseModel,
    seed: u64,
) -> Result<Vec<PointTrack>, SimError> {
    noise.validate()?;
    let normal = Normal::new(0.0, noise.pixel_sigma.max(f64::MIN_POSITIVE)).expect("finite sigma");
    let (w, h) = (k.width as f64, k.height as f64);
    points
        .iter()
        .enumerate()
        .map(|(id, p)| {
            let mut rng = seed::rng(seed::derive(seed, id as u64));
            let mut state: Option<Pixel> = None;
            let mut obs = Vec::with_capacity(arc.len());
            for (f, pose) in arc.iter().enumerate() {
                let truth = project_world(k, pose, p)?;
                let mut px = match state {
                    None => truth,
                    Some(prev) => Pixel::new(
                        noise.lag_alpha * prev.u + (1.0 - noise.lag_alpha) * truth.u,
                        noise.lag_alpha * prev.v + (1.0 - noise.lag_alpha) * truth.v,
                    ),
                };
                if noise.pixel_sigma > 0.0 {
                    px = Pixel::new(px.u + normal.sample(&mut rng), px.v + normal.sample(&mut rng));
                }
                state = Some(px);
                let reported = if noise.outlier_rate > 0.0 && rng.random_bool(noise.outlier_rate) {
                    let r = noise.outlier_px_range;
                    Pixel::new(
                        rng.random_range((truth.u - r).max(0.0)..=(truth.u + r).min(w)),
                        rng.random_range((truth.v - r).max(0.0)..=(truth.v + r).min(h)),
                    )
                } else {
                    px
                };
                obs.push(Observation { frame_index: f, pixel: reported });
            }
            Ok(PointTrack::new(id as u32, obs, arc.to_vec())?)
        })
        .collect()
}
