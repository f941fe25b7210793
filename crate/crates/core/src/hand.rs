//! Hand keypoints to unified fingertip actions.
//!
//! A frame's hand estimate is trusted for its local shape but not for where
//! it sits in the camera frame. The palm frame rebuilt from the keypoints is
//! swapped for the tracked palm pose, and the result is re-expressed in the
//! first camera frame of the episode.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Mat3, RigidTransform, Vec3};

pub const WRIST: usize = 0;
pub const THUMB_CMC: usize = 1;
pub const THUMB_TIP: usize = 4;
pub const INDEX_MCP: usize = 5;
pub const INDEX_TIP: usize = 8;
pub const MIDDLE_MCP: usize = 9;

pub const NUM_KEYPOINTS: usize = 21;

/// Maximum extent of a physically plausible hand.
pub const MAX_HAND_SPREAD: f64 = 0.4;

/// Gripper label for a closed pinch.
pub const GRIPPER_CLOSED: f64 = 1.0;
pub const GRIPPER_OPEN: f64 = -1.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HandError {
    #[error("wrist, index MCP and middle MCP are collinear (triangle area {0:e} m²)")]
    DegenerateHand(f64),
    #[error("invalid hand keypoints: {0}")]
    InvalidKeypoints(String),
}

/// 21 hand keypoints in meters (0 wrist, 1–4 thumb, 5–8 index, 9–12 middle,
/// 13–16 ring, 17–20 pinky; base to tip within each finger).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HandKeypoints21 {
    points: [Vec3; NUM_KEYPOINTS],
}

impl HandKeypoints21 {
    pub fn new(points: [Vec3; NUM_KEYPOINTS]) -> Result<Self, HandError> {
        if points.iter().any(|p| !p.iter().all(|x| x.is_finite())) {
            return Err(HandError::InvalidKeypoints("non-finite coordinate".into()));
        }
        let spread = points
            .iter()
            .flat_map(|a| points.iter().map(move |b| (a - b).norm()))
            .fold(0.0, f64::max);
        if spread >= MAX_HAND_SPREAD {
            return Err(HandError::InvalidKeypoints(format!("keypoint spread {spread:.3} m is not a hand")));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[Vec3; NUM_KEYPOINTS] {
        &self.points
    }

    pub fn get(&self, i: usize) -> &Vec3 {
        &self.points[i]
    }

    pub fn thumb_tip(&self) -> &Vec3 {
        &self.points[THUMB_TIP]
    }

    pub fn index_tip(&self) -> &Vec3 {
        &self.points[INDEX_TIP]
    }

    /// Applies one rigid map to every keypoint.
    pub fn transformed(&self, t: &RigidTransform) -> HandKeypoints21 {
        HandKeypoints21 {
            points: self.points.map(|p| t.transform_point(&p)),
        }
    }
}

/// Per-frame inputs to action extraction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub frame_index: usize,
    /// Camera-to-world pose `T_t`.
    pub camera_pose: RigidTransform,
    /// Tracked palm pose `H_t` in the camera frame.
    pub hand_pose: RigidTransform,
    /// Estimated keypoints `h_t` in the camera frame.
    pub keypoints: HandKeypoints21,
}

/// Thumb tip, index tip and gripper closure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnifiedAction {
    pub thumb_tip: Vec3,
    pub index_tip: Vec3,
    pub gripper: f64,
}

impl UnifiedAction {
    pub const DIM: usize = 7;

    pub fn new(thumb_tip: Vec3, index_tip: Vec3, gripper: f64) -> Self {
        Self { thumb_tip, index_tip, gripper }
    }

    pub fn to_array(&self) -> [f64; 7] {
        let (t, i) = (&self.thumb_tip, &self.index_tip);
        [t.x, t.y, t.z, i.x, i.y, i.z, self.gripper]
    }

    /// Reads the first seven values of `v`.
    pub fn from_slice(v: &[f64]) -> Self {
        Self {
            thumb_tip: Vec3::new(v[0], v[1], v[2]),
            index_tip: Vec3::new(v[3], v[4], v[5]),
            gripper: v[6],
        }
    }

    pub fn midpoint(&self) -> Vec3 {
        (self.thumb_tip + self.index_tip) * 0.5
    }

    pub fn is_closed(&self) -> bool {
        self.gripper > 0.0
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|x| x.is_finite())
    }

    /// Moves both tips by `t`; the gripper is untouched.
    pub fn transformed(&self, t: &RigidTransform) -> UnifiedAction {
        UnifiedAction {
            thumb_tip: t.transform_point(&self.thumb_tip),
            index_tip: t.transform_point(&self.index_tip),
            gripper: self.gripper,
        }
    }
}

/// Palm frame: origin at the centroid of ThumbCMC, IndexMCP and MiddleMCP,
/// first axis along Wrist→MiddleMCP, third axis normal to the plane spanned
/// with IndexMCP→MiddleMCP.
pub fn palm_frame(h: &HandKeypoints21) -> Result<RigidTransform, HandError> {
    let wrist = h.get(WRIST);
    let index = h.get(INDEX_MCP);
    let middle = h.get(MIDDLE_MCP);
    let area = 0.5 * (index - wrist).cross(&(middle - wrist)).norm();
    if area < 1e-8 {
        return Err(HandError::DegenerateHand(area));
    }
    let e1 = (middle - wrist).normalize();
    let e3 = e1.cross(&(middle - index)).normalize();
    let e2 = e3.cross(&e1);
    let centroid = (h.get(THUMB_CMC) + index + middle) / 3.0;
    RigidTransform::new(Mat3::from_columns(&[e1, e2, e3]), centroid)
        .map_err(|e| HandError::InvalidKeypoints(e.to_string()))
}

/// Order in which the tracked palm pose corrects the estimated hand.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HandCorrection {
    /// `H_t Ĥ_t⁻¹ h_t`: the estimated palm frame is replaced by the tracked one.
    #[default]
    FrameReplacement,
    /// `H_t⁻¹ Ĥ_t h_t`, the chain as literally written.
    LiteralChain,
    /// No palm correction, only the camera re-expression.
    Uncorrected,
}

/// Keypoints of `rec` in the camera frame of `first_camera`, after palm
/// correction.
pub fn correct_hand(
    rec: &FrameRecord,
    first_camera: &RigidTransform,
    mode: HandCorrection,
) -> Result<HandKeypoints21, HandError> {
    let to_first = first_camera.inverse().compose(&rec.camera_pose);
    let correction = match mode {
        HandCorrection::FrameReplacement => rec.hand_pose.compose(&palm_frame(&rec.keypoints)?.inverse()),
        HandCorrection::LiteralChain => rec.hand_pose.inverse().compose(&palm_frame(&rec.keypoints)?),
        HandCorrection::Uncorrected => RigidTransform::identity(),
    };
    Ok(rec.keypoints.transformed(&to_first.compose(&correction)))
}

/// `+1` when the fingertips are closer than `threshold`, else `−1`.
pub fn detect_grasp(thumb_tip: &Vec3, index_tip: &Vec3, threshold: f64) -> f64 {
    if (thumb_tip - index_tip).norm() < threshold {
        GRIPPER_CLOSED
    } else {
        GRIPPER_OPEN
    }
}

/// Thresholded grasp detection with an optional hysteresis band: once
/// closed, the tips must separate past `threshold + band` to reopen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraspDetector {
    pub threshold: f64,
    pub hysteresis: f64,
}

impl GraspDetector {
    pub fn new(threshold: f64) -> Self {
        Self { threshold, hysteresis: 0.0 }
    }

    /// Labels a sequence of tip pairs.
    pub fn label(&self, tips: impl IntoIterator<Item = (Vec3, Vec3)>) -> Vec<f64> {
        let mut closed = false;
        tips.into_iter()
            .map(|(t, i)| {
                let gap = (t - i).norm();
                closed = if closed { gap < self.threshold + self.hysteresis } else { gap < self.threshold };
                if closed {
                    GRIPPER_CLOSED
                } else {
                    GRIPPER_OPEN
                }
            })
            .collect()
    }
}

/// Fingertips and grasp state from corrected keypoints.
pub fn extract_action(h: &HandKeypoints21, threshold: f64) -> UnifiedAction {
    UnifiedAction {
        thumb_tip: *h.thumb_tip(),
        index_tip: *h.index_tip(),
        gripper: detect_grasp(h.thumb_tip(), h.index_tip(), threshold),
    }
}
