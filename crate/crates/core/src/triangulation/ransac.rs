use nalgebra::{DMatrix, SVD};
use rand::seq::index::sample;

use crate::geometry::{CameraIntrinsics, RigidTransform, Vec3};
use crate::seed;

use super::{reprojection_error, PointTrack, TriangulationConfig, TriangulationError};

/// Homogeneous linear triangulation from the observations at `positions`.
///
/// Pixels are lifted to normalized image coordinates before building the
/// system. Returns `None` for points at infinity or behind any of the views.
pub fn dlt_triangulate(
    track: &PointTrack,
    extrinsics: &[RigidTransform],
    positions: &[usize],
    k: &CameraIntrinsics,
) -> Option<Vec3> {
    let k_inv = k.inverse_matrix();
    let mut a = DMatrix::<f64>::zeros(2 * positions.len(), 4);
    for (row, &pos) in positions.iter().enumerate() {
        let x = k_inv * track.pixel(pos).homogeneous();
        let ext = &extrinsics[pos];
        let r = ext.rotation();
        let t = ext.translation();
        for (c, coord) in [x.x, x.y].into_iter().enumerate() {
            let rr = 2 * row + c;
            for col in 0..3 {
                a[(rr, col)] = coord * r[(2, col)] - r[(c, col)];
            }
            a[(rr, 3)] = coord * t.z - t[c];
        }
    }
    // Pad to square so the SVD always yields the full right basis.
    if a.nrows() < 4 {
        a = a.resize_vertically(4, 0.0);
    }
    let svd = SVD::new(a, false, true);
    let v_t = svd.v_t?;
    let (min_idx, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|x, y| x.1.total_cmp(y.1))?;
    let h = v_t.row(min_idx);
    if h[3].abs() < 1e-12 {
        return None;
    }
    let q = Vec3::new(h[0] / h[3], h[1] / h[3], h[2] / h[3]);
    let in_front = positions.iter().all(|&p| extrinsics[p].transform_point(&q).z > 0.0);
    (in_front && q.iter().all(|v| v.is_finite())).then_some(q)
}

/// Support of a candidate: number of frames under the reprojection threshold
/// and their mean error.
fn score(
    q: &Vec3,
    track: &PointTrack,
    extrinsics: &[RigidTransform],
    inliers: &[usize],
    k: &CameraIntrinsics,
    tau: f64,
) -> (usize, f64) {
    let (count, sum) = inliers.iter().fold((0usize, 0.0), |(c, s), &pos| {
        let e = reprojection_error(k, &extrinsics[pos], q, track.pixel(pos));
        if e < tau {
            (c + 1, s + e)
        } else {
            (c, s)
        }
    });
    (count, if count > 0 { sum / count as f64 } else { f64::INFINITY })
}

/// RANSAC over random size-`k` subsets of `inliers`, each triangulated by
/// DLT. The winner maximizes the number of frames with reprojection error
/// below `inlier_tau`; ties go to the lower mean error among those frames.
pub fn ransac_triangulate(
    track: &PointTrack,
    inliers: &[usize],
    k: &CameraIntrinsics,
    cfg: &TriangulationConfig,
    seed: u64,
) -> Result<Vec3, TriangulationError> {
    if inliers.len() < cfg.ransac_subset_k.max(2) {
        return Err(TriangulationError::InsufficientInliers {
            have: inliers.len(),
            need: cfg.ransac_subset_k.max(2),
        });
    }
    let extrinsics = track.extrinsics();
    let mut rng = seed::rng(seed);
    let mut best: Option<(Vec3, usize, f64)> = None;
    let mut subset = Vec::with_capacity(cfg.ransac_subset_k);
    for _ in 0..cfg.ransac_iters {
        subset.clear();
        subset.extend(sample(&mut rng, inliers.len(), cfg.ransac_subset_k).into_iter().map(|i| inliers[i]));
        let Some(q) = dlt_triangulate(track, &extrinsics, &subset, k) else {
            continue;
        };
        if !cfg.bounds.contains(&q) {
            continue;
        }
        let (count, mean) = score(&q, track, &extrinsics, inliers, k, cfg.inlier_tau);
        let better = match &best {
            None => true,
            Some((_, bc, bm)) => count > *bc || (count == *bc && mean < *bm),
        };
        if better {
            best = Some((q, count, mean));
        }
    }
    match best {
        Some((q, count, _)) if count >= 2 => Ok(q),
        _ => Err(TriangulationError::NoValidCandidate),
    }
}
