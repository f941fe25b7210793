//! Rigid transforms, pinhole projection and two-view epipolar primitives.
//!
//! Poses are stored camera-to-world: `T.transform_point(p_cam)` yields the
//! world coordinates of a camera-frame point. World-to-camera maps are
//! obtained with [`RigidTransform::inverse`].

use nalgebra::{Matrix3, Rotation3, Unit, Vector3};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Depths at or below this value are treated as on/behind the image plane.
pub const MIN_DEPTH: f64 = 1e-9;

/// Tolerance used when validating rotation matrices.
pub const ROTATION_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("point depth {0} is not in front of the camera")]
    NonPositiveDepth(f64),
    #[error("camera baseline {0:e} m is too small for epipolar geometry")]
    DegenerateBaseline(f64),
    #[error("matrix is not a proper rotation (orthonormality error {0:e})")]
    NotARotation(f64),
    #[error("invalid camera intrinsics: {0}")]
    InvalidIntrinsics(String),
}

/// Largest absolute entry of `RᵀR − I`.
pub fn orthonormality_error(r: &Mat3) -> f64 {
    (r.transpose() * r - Mat3::identity()).abs().max()
}

/// Nearest proper rotation to `m` in the Frobenius sense.
pub fn orthonormalize(m: &Mat3) -> Mat3 {
    let svd = m.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut r = u * v_t;
    if r.determinant() < 0.0 {
        let mut u = u;
        u.column_mut(2).neg_mut();
        r = u * v_t;
    }
    r
}

/// Skew-symmetric cross-product matrix `[v]×`.
pub fn skew(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// An element of SE(3).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    rotation: Mat3,
    translation: Vec3,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
        }
    }

    /// Builds a transform, rejecting matrices that are not proper rotations.
    pub fn new(rotation: Mat3, translation: Vec3) -> Result<Self, GeometryError> {
        let err = orthonormality_error(&rotation);
        let det = rotation.determinant();
        if !(err < ROTATION_TOL) || !((det - 1.0).abs() < ROTATION_TOL) || !translation.iter().all(|x| x.is_finite()) {
            return Err(GeometryError::NotARotation(err.max((det - 1.0).abs())));
        }
        Ok(Self { rotation, translation })
    }

    pub fn from_translation(translation: Vec3) -> Self {
        Self {
            rotation: Mat3::identity(),
            translation,
        }
    }

    pub fn from_rotation(rotation: Rotation3<f64>) -> Self {
        Self {
            rotation: *rotation.matrix(),
            translation: Vec3::zeros(),
        }
    }

    pub fn from_rotation_translation(rotation: Rotation3<f64>, translation: Vec3) -> Self {
        Self {
            rotation: *rotation.matrix(),
            translation,
        }
    }

    /// Rotation of `angle` radians about `axis` (need not be normalized).
    pub fn from_axis_angle(axis: Vec3, angle: f64) -> Self {
        Self::from_rotation(Rotation3::from_axis_angle(&Unit::new_normalize(axis), angle))
    }

    /// Camera-to-world pose of a camera at `eye` looking at `target`, with
    /// image `y` pointing away from `up`.
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3) -> Self {
        let z = (target - eye).normalize();
        let x = z.cross(&up).normalize();
        let y = z.cross(&x);
        Self {
            rotation: Mat3::from_columns(&[x, y, z]),
            translation: eye,
        }
    }

    pub fn rotation(&self) -> &Mat3 {
        &self.rotation
    }

    pub fn translation(&self) -> &Vec3 {
        &self.translation
    }

    /// `self ∘ other`, i.e. `(self ∘ other)(x) = self(other(x))`.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        let mut rotation = self.rotation * other.rotation;
        if orthonormality_error(&rotation) > 1e-12 {
            rotation = orthonormalize(&rotation);
        }
        RigidTransform {
            rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn rotate_vector(&self, v: &Vec3) -> Vec3 {
        self.rotation * v
    }

    /// Row-major rotation followed by the translation.
    pub fn to_row_major(&self) -> [f64; 12] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)], r[(0, 1)], r[(0, 2)],
            r[(1, 0)], r[(1, 1)], r[(1, 2)],
            r[(2, 0)], r[(2, 1)], r[(2, 2)],
            t.x, t.y, t.z,
        ]
    }

    pub fn from_row_major(v: &[f64; 12]) -> Result<Self, GeometryError> {
        let rotation = Mat3::new(v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8]);
        Self::new(rotation, Vec3::new(v[9], v[10], v[11]))
    }

    /// Angle of the rotation part in radians.
    pub fn rotation_angle(&self) -> f64 {
        ((self.rotation.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos()
    }
}

impl Serialize for RigidTransform {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_row_major().serialize(s)
    }
}

impl<'de> Deserialize<'de> for RigidTransform {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = <[f64; 12]>::deserialize(d)?;
        RigidTransform::from_row_major(&v).map_err(serde::de::Error::custom)
    }
}

impl std::ops::Mul for RigidTransform {
    type Output = RigidTransform;
    fn mul(self, rhs: RigidTransform) -> RigidTransform {
        self.compose(&rhs)
    }
}

/// Image coordinates in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pixel {
    pub u: f64,
    pub v: f64,
}

impl Pixel {
    pub fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }

    pub fn homogeneous(&self) -> Vec3 {
        Vec3::new(self.u, self.v, 1.0)
    }

    pub fn distance(&self, other: &Pixel) -> f64 {
        (self.u - other.u).hypot(self.v - other.v)
    }

    pub fn is_finite(&self) -> bool {
        self.u.is_finite() && self.v.is_finite()
    }
}

/// Pinhole intrinsics for a linearized image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self, GeometryError> {
        if !(fx > 0.0 && fy > 0.0) {
            return Err(GeometryError::InvalidIntrinsics(format!("focal lengths must be positive (fx={fx}, fy={fy})")));
        }
        if !(0.0..width as f64).contains(&cx) || !(0.0..height as f64).contains(&cy) {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "principal point ({cx}, {cy}) outside {width}x{height} image"
            )));
        }
        Ok(Self { fx, fy, cx, cy, width, height })
    }

    /// Square image with the principal point at its center.
    pub fn centered(focal: f64, size: u32) -> Result<Self, GeometryError> {
        let c = size as f64 / 2.0;
        Self::new(focal, focal, c, c, size, size)
    }

    pub fn matrix(&self) -> Mat3 {
        Mat3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn inverse_matrix(&self) -> Mat3 {
        Mat3::new(
            1.0 / self.fx, 0.0, -self.cx / self.fx,
            0.0, 1.0 / self.fy, -self.cy / self.fy,
            0.0, 0.0, 1.0,
        )
    }

    pub fn project(&self, p_cam: &Vec3) -> Result<Pixel, GeometryError> {
        if !(p_cam.z > MIN_DEPTH) {
            return Err(GeometryError::NonPositiveDepth(p_cam.z));
        }
        Ok(Pixel {
            u: self.fx * p_cam.x / p_cam.z + self.cx,
            v: self.fy * p_cam.y / p_cam.z + self.cy,
        })
    }

    /// Camera-frame point at `depth` (its z coordinate) along the ray of `px`.
    pub fn unproject(&self, px: &Pixel, depth: f64) -> Result<Vec3, GeometryError> {
        if !(depth > 0.0) {
            return Err(GeometryError::NonPositiveDepth(depth));
        }
        Ok(Vec3::new(
            (px.u - self.cx) / self.fx * depth,
            (px.v - self.cy) / self.fy * depth,
            depth,
        ))
    }

    pub fn contains(&self, px: &Pixel) -> bool {
        px.u >= 0.0 && px.v >= 0.0 && px.u < self.width as f64 && px.v < self.height as f64
    }
}

/// Projects a world point into a camera with camera-to-world pose `pose`.
pub fn project_world(k: &CameraIntrinsics, pose: &RigidTransform, p_world: &Vec3) -> Result<Pixel, GeometryError> {
    k.project(&pose.inverse().transform_point(p_world))
}

/// Fundamental matrix mapping pixels of camera `i` to epipolar lines in
/// camera `j`, so that `u_jᵀ F u_i = 0`.
///
/// `t_i`, `t_j` are camera-to-world poses. With world-to-camera extrinsics
/// `(R_i, t_i)`, `(R_j, t_j)` the relative motion is `R_ij = R_j R_iᵀ`,
/// `t_ij = t_j − R_ij t_i` and `F = K⁻ᵀ [t_ij]× R_ij K⁻¹`.
pub fn fundamental_matrix(
    k: &CameraIntrinsics,
    t_i: &RigidTransform,
    t_j: &RigidTransform,
) -> Result<Mat3, GeometryError> {
    let ext_i = t_i.inverse();
    let ext_j = t_j.inverse();
    let r_ij = ext_j.rotation() * ext_i.rotation().transpose();
    let t_ij = ext_j.translation() - r_ij * ext_i.translation();
    let baseline = t_ij.norm();
    if baseline < 1e-9 {
        return Err(GeometryError::DegenerateBaseline(baseline));
    }
    let k_inv = k.inverse_matrix();
    Ok(k_inv.transpose() * skew(&t_ij) * r_ij * k_inv)
}

/// How a correspondence is scored against the epipolar constraint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpipolarMetric {
    /// First-order geometric (Sampson) distance, in pixels.
    #[default]
    Sampson,
    /// Raw algebraic residual `|u_jᵀ F u_i|`.
    Algebraic,
}

/// Residual of the correspondence `(u_i, u_j)` under `f`.
pub fn epipolar_residual(f: &Mat3, u_i: &Pixel, u_j: &Pixel, metric: EpipolarMetric) -> f64 {
    let xi = u_i.homogeneous();
    let xj = u_j.homogeneous();
    let line_j = f * xi;
    let e = xj.dot(&line_j);
    match metric {
        EpipolarMetric::Algebraic => e.abs(),
        EpipolarMetric::Sampson => {
            let line_i = f.transpose() * xj;
            let denom = line_j.x * line_j.x + line_j.y * line_j.y + line_i.x * line_i.x + line_i.y * line_i.y;
            if denom <= 0.0 {
                return if e == 0.0 { 0.0 } else { f64::INFINITY };
            }
            e.abs() / denom.sqrt()
        }
    }
}

/// Sampson distance of a correspondence.
pub fn sampson_distance(f: &Mat3, u_i: &Pixel, u_j: &Pixel) -> f64 {
    epipolar_residual(f, u_i, u_j, EpipolarMetric::Sampson)
}

/// Rotation composed from intrinsic X, then Y, then Z rotations.
pub fn rotation_xyz(ax: f64, ay: f64, az: f64) -> Rotation3<f64> {
    Rotation3::from_axis_angle(&Vector3::x_axis(), ax)
        * Rotation3::from_axis_angle(&Vector3::y_axis(), ay)
        * Rotation3::from_axis_angle(&Vector3::z_axis(), az)
}
