use crate::geometry::{epipolar_residual, fundamental_matrix, CameraIntrinsics, GeometryError};

use super::{PointTrack, TriangulationConfig, TriangulationError};

/// Observation positions (indices into the track) that satisfy the epipolar
/// constraint with at least `min_consistent_views` other frames.
///
/// Pairs with a degenerate baseline are skipped rather than counted.
pub fn filter_epipolar(
    track: &PointTrack,
    k: &CameraIntrinsics,
    cfg: &TriangulationConfig,
) -> Result<Vec<usize>, TriangulationError> {
    track.require_two()?;
    let n = track.len();
    let mut support = vec![0usize; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let f = match fundamental_matrix(k, &track.poses()[i], &track.poses()[j]) {
                Ok(f) => f,
                Err(GeometryError::DegenerateBaseline(_)) => continue,
                Err(e) => return Err(e.into()),
            };
            if epipolar_residual(&f, track.pixel(i), track.pixel(j), cfg.epipolar_metric) < cfg.epsilon {
                support[i] += 1;
                support[j] += 1;
            }
        }
    }
    Ok((0..n).filter(|&i| support[i] >= cfg.min_consistent_views).collect())
}
