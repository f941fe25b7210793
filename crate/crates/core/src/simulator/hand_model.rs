use std::sync::OnceLock;

use nalgebra::Rotation3;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::geometry::{Mat3, RigidTransform, Vec3};
use crate::hand::{palm_frame, FrameRecord, HandKeypoints21, INDEX_TIP, NUM_KEYPOINTS, THUMB_TIP};
use crate::seed;

use super::SimError;

/// Fixed knuckle and finger positions of the template hand, in a palm frame
/// with `x` along the fingers. Thumb and index chains are derived from the
/// tip gap.
const RAW_FIXED: [(usize, [f64; 3]); 14] = [
    (0, [-0.08, 0.0, 0.0]),
    (1, [-0.05, -0.03, -0.01]),
    (5, [0.005, -0.025, 0.0]),
    (9, [0.01, 0.0, 0.0]),
    (10, [0.045, 0.0, -0.01]),
    (11, [0.07, 0.0, -0.025]),
    (12, [0.085, 0.0, -0.04]),
    (13, [0.005, 0.02, 0.0]),
    (14, [0.035, 0.022, -0.015]),
    (15, [0.055, 0.024, -0.03]),
    (16, [0.065, 0.025, -0.045]),
    (17, [-0.005, 0.038, 0.0]),
    (18, [0.02, 0.042, -0.015]),
    (19, [0.035, 0.045, -0.03]),
];
const RAW_PINKY_TIP: [f64; 3] = [0.045, 0.046, -0.04];
/// Pinch point between thumb and index tips; the gap opens along `y`.
const RAW_PINCH: [f64; 3] = [0.08, -0.02, -0.04];

fn raw_keypoints(gap: f64) -> [Vec3; NUM_KEYPOINTS] {
    let mut p = [Vec3::zeros(); NUM_KEYPOINTS];
    for (i, v) in RAW_FIXED {
        p[i] = Vec3::from(v);
    }
    p[20] = Vec3::from(RAW_PINKY_TIP);
    let pinch = Vec3::from(RAW_PINCH);
    p[THUMB_TIP] = pinch - Vec3::y() * (gap / 2.0);
    p[INDEX_TIP] = pinch + Vec3::y() * (gap / 2.0);
    for (base, tip) in [(1usize, THUMB_TIP), (5, INDEX_TIP)] {
        p[base + 1] = p[base].lerp(&p[tip], 1.0 / 3.0);
        p[base + 2] = p[base].lerp(&p[tip], 2.0 / 3.0);
    }
    p
}

/// Maps raw template coordinates into the template's own palm frame.
fn to_palm() -> &'static RigidTransform {
    static T: OnceLock<RigidTransform> = OnceLock::new();
    T.get_or_init(|| {
        let raw = HandKeypoints21::new(raw_keypoints(0.05)).expect("template hand is valid");
        palm_frame(&raw).expect("template palm is not degenerate").inverse()
    })
}

/// Template keypoints in palm coordinates, so their palm frame is the identity.
fn local_keypoints(gap: f64) -> [Vec3; NUM_KEYPOINTS] {
    raw_keypoints(gap).map(|p| to_palm().transform_point(&p))
}

fn local_pinch() -> Vec3 {
    to_palm().transform_point(&Vec3::from(RAW_PINCH))
}

/// World orientation of the demonstrator's palm: fingers forward and tilted
/// 40° down, thumb–index gap along world `x`.
pub fn hand_orientation() -> Mat3 {
    let (s, c) = 40f64.to_radians().sin_cos();
    let x = Vec3::new(0.0, c, -s);
    let y = Vec3::new(-1.0, 0.0, 0.0);
    Mat3::from_columns(&[x, y, x.cross(&y)])
}

/// Palm pose (world) placing the fingertip midpoint at `pinch`.
pub fn palm_pose_at(pinch: &Vec3, orientation: &Mat3) -> RigidTransform {
    let rot = Rotation3::from_matrix_unchecked(*orientation);
    RigidTransform::from_rotation_translation(rot, pinch - orientation * local_pinch())
}

/// World keypoints for a palm pose and fingertip gap.
pub fn hand_keypoints(palm: &RigidTransform, gap: f64) -> HandKeypoints21 {
    HandKeypoints21::new(local_keypoints(gap).map(|p| palm.transform_point(&p))).expect("template hand stays valid")
}

/// Errors of the simulated hand estimator and of the palm tracker.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HandNoiseModel {
    /// Rotation of the planted palm error (radians).
    pub palm_rot_sigma: f64,
    /// Translation of the planted palm error (meters).
    pub palm_trans_sigma: f64,
    /// Independent per-keypoint noise (meters); not correctable.
    pub keypoint_sigma: f64,
    /// Jitter of the tracked palm pose itself.
    pub oracle_rot_sigma: f64,
    pub oracle_trans_sigma: f64,
    /// Plant errors of exactly the sigma magnitudes in random directions
    /// instead of Gaussian draws.
    pub exact_magnitude: bool,
}

impl Default for HandNoiseModel {
    fn default() -> Self {
        Self {
            palm_rot_sigma: 0.1,
            palm_trans_sigma: 0.02,
            keypoint_sigma: 0.002,
            oracle_rot_sigma: 0.0,
            oracle_trans_sigma: 0.0,
            exact_magnitude: false,
        }
    }
}

impl HandNoiseModel {
    pub fn zero() -> Self {
        Self { palm_rot_sigma: 0.0, palm_trans_sigma: 0.0, keypoint_sigma: 0.0, oracle_rot_sigma: 0.0, oracle_trans_sigma: 0.0, exact_magnitude: false }
    }

    pub fn is_valid(&self) -> bool {
        [self.palm_rot_sigma, self.palm_trans_sigma, self.keypoint_sigma, self.oracle_rot_sigma, self.oracle_trans_sigma]
            .iter()
            .all(|s| *s >= 0.0 && s.is_finite())
    }
}

fn unit(rng: &mut impl Rng) -> Vec3 {
    loop {
        let v = Vec3::from_fn(|_, _| StandardNormal.sample(rng));
        if v.norm() > 1e-9 {
            return v.normalize();
        }
    }
}

fn gaussian(rng: &mut impl Rng, sigma: f64) -> Vec3 {
    Vec3::from_fn(|_, _| sigma * Distribution::<f64>::sample(&StandardNormal, rng))
}

/// Rigid error about `center`: rotate by the sampled rotation vector, then
/// translate.
fn rigid_error(rng: &mut impl Rng, rot: f64, trans: f64, exact: bool, center: &Vec3) -> RigidTransform {
    let (w, t) = if exact { (unit(rng) * rot, unit(rng) * trans) } else { (gaussian(rng, rot), gaussian(rng, trans)) };
    let r = RigidTransform::from_rotation(Rotation3::new(w));
    RigidTransform::from_translation(center + t).compose(&r).compose(&RigidTransform::from_translation(-center))
}

/// Ground truth of one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HandTruth {
    pub frame_index: usize,
    /// Camera-to-world pose of the frame.
    pub camera_pose: RigidTransform,
    /// True keypoints in the frame's camera coordinates.
    pub keypoints: HandKeypoints21,
}

/// Builds per-frame estimator output: the tracked palm `H_t` (true palm,
/// optionally jittered) and keypoints `ĥ_t` that carry one planted rigid
/// error about the palm centre, so their own palm frame is `Ĥ_t = E·H_t`.
/// Keypoint noise is added on top.
pub fn corrupt_hand(truth: &[HandTruth], noise: &HandNoiseModel, seed: u64) -> Result<Vec<FrameRecord>, SimError> {
    if !noise.is_valid() {
        return Err(SimError::InvalidConfig("hand noise sigmas must be finite and non-negative".into()));
    }
    truth
        .iter()
        .map(|t| {
            let mut rng = seed::rng(seed::derive(seed, t.frame_index as u64));
            let palm = palm_frame(&t.keypoints)?;
            let center = *palm.translation();
            let error = rigid_error(&mut rng, noise.palm_rot_sigma, noise.palm_trans_sigma, noise.exact_magnitude, &center);
            let jitter = rigid_error(&mut rng, noise.oracle_rot_sigma, noise.oracle_trans_sigma, false, &center);
            let mut pts = *t.keypoints.transformed(&error).points();
            if noise.keypoint_sigma > 0.0 {
                let n = Normal::new(0.0, noise.keypoint_sigma).expect("finite sigma");
                pts.iter_mut().for_each(|p| *p += Vec3::new(n.sample(&mut rng), n.sample(&mut rng), n.sample(&mut rng)));
            }
            Ok(FrameRecord {
                frame_index: t.frame_index,
                camera_pose: t.camera_pose,
                hand_pose: jitter.compose(&palm),
                keypoints: HandKeypoints21::new(pts)?,
            })
        })
        .collect()
}
