use nalgebra::{Matrix2x3, Matrix3, Vector2};

use crate::geometry::{CameraIntrinsics, RigidTransform, Vec3, MIN_DEPTH};

use super::{PointTrack, TriangulationConfig, TriangulationError, TriangulationResult};

/// Huber loss of a residual magnitude: `½r²` inside `delta`, linear outside.
pub fn huber(r: f64, delta: f64) -> f64 {
    let a = r.abs();
    if a <= delta {
        0.5 * a * a
    } else {
        delta * (a - 0.5 * delta)
    }
}

struct Objective<'a> {
    track: &'a PointTrack,
    extrinsics: Vec<RigidTransform>,
    positions: &'a [usize],
    k: &'a CameraIntrinsics,
    delta: f64,
    lambda: f64,
}

struct Linearization {
    value: f64,
    gradient: Vec3,
    hessian: Matrix3<f64>,
}

impl Objective<'_> {
    fn residual(&self, pos: usize, q: &Vec3) -> Option<(Vector2<f64>, Vec3)> {
        let pc = self.extrinsics[pos].transform_point(q);
        if pc.z <= MIN_DEPTH {
            return None;
        }
        let px = self.track.pixel(pos);
        let r = Vector2::new(
            self.k.fx * pc.x / pc.z + self.k.cx - px.u,
            self.k.fy * pc.y / pc.z + self.k.cy - px.v,
        );
        Some((r, pc))
    }

    fn value(&self, q: &Vec3) -> f64 {
        let mut total = self.lambda * q.z;
        for &pos in self.positions {
            match self.residual(pos, q) {
                Some((r, _)) => total += huber(r.norm(), self.delta),
                None => return f64::INFINITY,
            }
        }
        total
    }

    fn linearize(&self, q: &Vec3) -> Option<Linearization> {
        let mut value = self.lambda * q.z;
        let mut gradient = Vec3::new(0.0, 0.0, self.lambda);
        let mut hessian = Matrix3::zeros();
        for &pos in self.positions {
            let (r, pc) = self.residual(pos, q)?;
            let s = r.norm();
            value += huber(s, self.delta);
            let w = if s <= self.delta { 1.0 } else { self.delta / s };
            let iz = 1.0 / pc.z;
            let d_proj = Matrix2x3::new(
                self.k.fx * iz, 0.0, -self.k.fx * pc.x * iz * iz,
                0.0, self.k.fy * iz, -self.k.fy * pc.y * iz * iz,
            );
            let j = d_proj * self.extrinsics[pos].rotation();
            gradient += w * j.transpose() * r;
            hessian += w * j.transpose() * j;
        }
        Some(Linearization { value, gradient, hessian })
    }
}

/// Value of the robust refinement objective at `q` over the observations at
/// `positions`: summed Huber reprojection error plus `depth_lambda · q_z`.
pub fn robust_objective(
    q: &Vec3,
    track: &PointTrack,
    positions: &[usize],
    k: &CameraIntrinsics,
    cfg: &TriangulationConfig,
) -> f64 {
    Objective {
        track,
        extrinsics: track.extrinsics(),
        positions,
        k,
        delta: cfg.huber_delta,
        lambda: cfg.depth_lambda,
    }
    .value(q)
}

const STEP_TOL: f64 = 1e-8;
const GRAD_TOL: f64 = 1e-8;

/// Box-constrained Levenberg-Marquardt on the IRLS-weighted reprojection
/// residuals. Accepted steps never increase the objective.
pub fn refine_huber_depth(
    q0: &Vec3,
    track: &PointTrack,
    inliers: &[usize],
    k: &CameraIntrinsics,
    cfg: &TriangulationConfig,
) -> Result<TriangulationResult, TriangulationError> {
    if inliers.len() < 2 {
        return Err(TriangulationError::InsufficientInliers { have: inliers.len(), need: 2 });
    }
    let obj = Objective {
        track,
        extrinsics: track.extrinsics(),
        positions: inliers,
        k,
        delta: cfg.huber_delta,
        lambda: cfg.depth_lambda,
    };
    let bounds = &cfg.bounds;
    let mut q = bounds.clamp(q0);
    let mut converged = false;
    let mut iterations = 0usize;
    let mut projected = 0usize;
    let mut mu: Option<f64> = None;

    'outer: while iterations < cfg.max_refine_iters {
        let Some(lin) = obj.linearize(&q) else {
            break;
        };
        let projected_grad = q - bounds.clamp(&(q - lin.gradient));
        if projected_grad.norm() < GRAD_TOL {
            converged = true;
            break;
        }
        let mut damping = *mu.get_or_insert(1e-3 * lin.hessian.diagonal().max().max(1e-12));
        loop {
            let system = lin.hessian + Matrix3::identity() * damping;
            let Some(step) = system.cholesky().map(|c| c.solve(&(-lin.gradient))) else {
                damping *= 4.0;
                continue;
            };
            let raw = q + step;
            let candidate = bounds.clamp(&raw);
            let value = obj.value(&candidate);
            if value <= lin.value {
                iterations += 1;
                if candidate != raw {
                    projected += 1;
                }
                let moved = (candidate - q).norm();
                q = candidate;
                mu = Some((damping / 3.0).max(1e-15));
                if moved < STEP_TOL {
                    converged = true;
                    break 'outer;
                }
                break;
            }
            damping *= 4.0;
            if damping > 1e20 {
                // No descent direction left at machine precision.
                converged = true;
                break 'outer;
            }
        }
    }

    if iterations > 0 && 2 * projected > iterations {
        return Err(TriangulationError::DivergedOutsideBounds { projected, iterations });
    }

    let errors: Vec<f64> = inliers
        .iter()
        .map(|&pos| obj.residual(pos, &q).map_or(f64::INFINITY, |(r, _)| r.norm()))
        .collect();
    Ok(TriangulationResult {
        point: q,
        inlier_frames: inliers.iter().map(|&p| track.observations()[p].frame_index).collect(),
        mean_inlier_reproj_error: errors.iter().sum::<f64>() / errors.len() as f64,
        converged,
    })
}
