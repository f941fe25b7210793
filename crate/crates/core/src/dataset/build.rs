use serde::{Deserialize, Serialize};

use crate::geometry::CameraIntrinsics;
use crate::hand::{correct_hand, FrameRecord, GraspDetector, HandCorrection, UnifiedAction};
use crate::triangulation::{triangulate_object_from, ObjectTriangulation, PointTrack, TriangulationConfig};

use super::{DatasetError, DemoMeta, Demonstration};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildOptions {
    pub task_name: String,
    pub triangulation: TriangulationConfig,
    pub grasp: GraspDetector,
    pub correction: HandCorrection,
    /// Seed of the RANSAC stream.
    pub ransac_seed: u64,
    pub meta: DemoMeta,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self {
            task_name: "task".into(),
            triangulation: TriangulationConfig::default(),
            grasp: GraspDetector::new(0.05),
            correction: HandCorrection::FrameReplacement,
            ransac_seed: 0,
            meta: DemoMeta::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BuiltDemonstration {
    pub demo: Demonstration,
    pub triangulation: ObjectTriangulation,
}

/// Extracts the unified state/action episode from per-frame hand records and
/// object point tracks. Everything is expressed in the camera frame of the
/// first record.
pub fn build_demonstration(
    frames: &[FrameRecord],
    tracks: &[PointTrack],
    k: &CameraIntrinsics,
    opts: &BuildOptions,
) -> Result<BuiltDemonstration, DatasetError> {
    let first = frames.first().ok_or(DatasetError::NoFrames)?;
    for track in tracks {
        for (obs, pose) in track.observations().iter().zip(track.poses()) {
            let rec = frames
                .iter()
                .find(|f| f.frame_index == obs.frame_index)
                .ok_or_else(|| DatasetError::Misaligned(format!("point {} observed in unknown frame {}", track.point_id(), obs.frame_index)))?;
            if rec.camera_pose != *pose {
                return Err(DatasetError::Misaligned(format!(
                    "point {} frame {}: track pose differs from the frame's camera pose",
                    track.point_id(),
                    obs.frame_index
                )));
            }
        }
    }

    let triangulation = triangulate_object_from(tracks, &first.camera_pose, k, &opts.triangulation, opts.ransac_seed)?;

    let mut tips = Vec::with_capacity(frames.len());
    for rec in frames {
        let h = correct_hand(rec, &first.camera_pose, opts.correction).map_err(|source| DatasetError::Hand { frame: rec.frame_index, source })?;
        tips.push((*h.thumb_tip(), *h.index_tip()));
    }
    let grippers = opts.grasp.label(tips.iter().copied());
    let actions: Vec<UnifiedAction> = tips.iter().zip(grippers).map(|((t, i), g)| UnifiedAction::new(*t, *i, g)).collect();

    Ok(BuiltDemonstration {
        demo: Demonstration::from_actions(opts.task_name.clone(), triangulation.state.clone(), &actions, opts.meta),
        triangulation,
    })
}
