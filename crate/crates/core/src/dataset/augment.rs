use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::geometry::{rotation_xyz, RigidTransform, Vec3};
use crate::seed;

use super::Demonstration;

/// Per-episode random rigid transform plus object-point noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    /// Half-width of the uniform per-axis rotation angle (radians).
    pub rot_range: f64,
    /// Half-width of the uniform per-axis translation (meters).
    pub trans_range: f64,
    /// Std-dev of Gaussian noise added to object points (meters).
    pub point_noise_sigma: f64,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            rot_range: std::f64::consts::FRAC_PI_6,
            trans_range: 0.5,
            point_noise_sigma: 0.005,
            seed: 0,
        }
    }
}

impl AugmentConfig {
    pub fn identity() -> Self {
        Self { rot_range: 0.0, trans_range: 0.0, point_noise_sigma: 0.0, seed: 0 }
    }

    pub fn is_valid(&self) -> bool {
        (0.0..=std::f64::consts::PI).contains(&self.rot_range) && self.trans_range >= 0.0 && self.point_noise_sigma >= 0.0
    }
}

fn symmetric(rng: &mut impl Rng, half_width: f64) -> f64 {
    if half_width > 0.0 {
        rng.random_range(-half_width..=half_width)
    } else {
        0.0
    }
}

/// Draws the episode transform: XYZ-intrinsic angles and a translation, each
/// uniform per axis.
pub fn sample_augmentation(rng: &mut impl Rng, cfg: &AugmentConfig) -> RigidTransform {
    let (ax, ay, az) = (symmetric(rng, cfg.rot_range), symmetric(rng, cfg.rot_range), symmetric(rng, cfg.rot_range));
    let t = Vec3::new(symmetric(rng, cfg.trans_range), symmetric(rng, cfg.trans_range), symmetric(rng, cfg.trans_range));
    RigidTransform::from_rotation_translation(rotation_xyz(ax, ay, az), t)
}

/// Applies one random rigid transform to the object points, actions and
/// proprioception of `demo`, then perturbs the object points.
pub fn augment_episode(demo: &Demonstration, cfg: &AugmentConfig) -> Demonstration {
    let mut rng = seed::rng(cfg.seed);
    let g = sample_augmentation(&mut rng, cfg);
    let mut out = demo.clone();
    for p in out.object_state.points.iter_mut() {
        *p = g.transform_point(p);
    }
    if cfg.point_noise_sigma > 0.0 {
        let noise = Normal::new(0.0, cfg.point_noise_sigma).expect("noise sigma is finite and positive");
        for p in out.object_state.points.iter_mut() {
            *p += Vec3::new(noise.sample(&mut rng), noise.sample(&mut rng), noise.sample(&mut rng));
        }
    }
    for s in out.steps.iter_mut() {
        s.action = s.action.transformed(&g);
        s.proprio = s.proprio.transformed(&g);
    }
    out
}
