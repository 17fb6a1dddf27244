//! Pinhole intrinsics, SE(3) extrinsics and the camera → clip → NDC → pixel
//! projection chain, including the affine (EWA) Jacobian.
//!
//! Camera space uses positive depth: a point `(x, y, d)` with `d > 0` lies in
//! front of the camera. The OpenGL-style projection matrix expects the
//! negative-z convention, so `project_point` feeds it `(x, y, -d)`.
//!
//! Poses map world (canonical, view-1) coordinates into the camera:
//! `μ_C = W μ + t`. Updates are applied on the left, `T ← exp(ξ) · T`.

use nalgebra::{Matrix4, Vector4};

use crate::error::{Error, Result};
use crate::math::{self, skew, Mat2, Mat2x3, Mat3, Vec2, Vec3};

pub const DEFAULT_NEAR: f64 = 0.01;
pub const DEFAULT_FAR: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    /// Absolute principal point in pixels.
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    pub near: f64,
    pub far: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            near: DEFAULT_NEAR,
            far: DEFAULT_FAR,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn with_clip(mut self, near: f64, far: f64) -> Result<Self> {
        self.near = near;
        self.far = far;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.fx, self.fy, self.cx, self.cy, self.near, self.far]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidCamera("non-finite intrinsic"));
        }
        if self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(Error::InvalidCamera("focal lengths must be positive"));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidCamera("image size must be positive"));
        }
        if !(self.near > 0.0 && self.near < self.far) {
            return Err(Error::InvalidCamera("need 0 < near < far"));
        }
        Ok(())
    }

    /// `tan(FoV_x / 2) = W / (2 f_x)`.
    pub fn tan_half_fov_x(&self) -> f64 {
        self.width as f64 / (2.0 * self.fx)
    }

    pub fn tan_half_fov_y(&self) -> f64 {
        self.height as f64 / (2.0 * self.fy)
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    /// Back-projects pixel coordinates `(u, v)` at depth `d`.
    pub fn unproject(&self, u: f64, v: f64, depth: f64) -> Vec3 {
        Vec3::new(
            (u - self.cx) / self.fx * depth,
            (v - self.cy) / self.fy * depth,
            depth,
        )
    }
}

/// Rigid world → camera transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraPose {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl Default for CameraPose {
    fn default() -> Self {
        Self::identity()
    }
}

impl CameraPose {
    pub fn identity() -> Self {
        Self {
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn new(rotation: Mat3, translation: Vec3) -> Result<Self> {
        let pose = Self {
            rotation,
            translation,
        };
        pose.validate()?;
        Ok(pose)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.rotation.iter().chain(self.translation.iter()).all(|v| v.is_finite()) {
            return Err(Error::InvalidCamera("non-finite pose"));
        }
        if (self.rotation * self.rotation.transpose() - Mat3::identity()).amax() > 1e-9 {
            return Err(Error::InvalidCamera("rotation is not orthonormal"));
        }
        if (self.rotation.determinant() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidCamera("rotation is not proper"));
        }
        Ok(())
    }

    pub fn transform(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &CameraPose) -> CameraPose {
        CameraPose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> CameraPose {
        let rt = self.rotation.transpose();
        CameraPose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Left-multiplicative update `exp(ξ) · self`.
    pub fn retract(&self, xi: &TangentUpdate) -> CameraPose {
        se3_exp(xi).compose(self)
    }

    /// Rotation angle of `self⁻¹ ∘ other`, in radians.
    pub fn rotation_angle_to(&self, other: &CameraPose) -> f64 {
        let rel = self.rotation.transpose() * other.rotation;
        let c = ((rel.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
        libm::acos(c)
    }
}

/// Six-vector in se(3): `[ω_x, ω_y, ω_z, v_x, v_y, v_z]`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TangentUpdate(pub [f64; 6]);

impl TangentUpdate {
    pub fn new(omega: Vec3, v: Vec3) -> Self {
        Self([omega.x, omega.y, omega.z, v.x, v.y, v.z])
    }

    pub fn omega(&self) -> Vec3 {
        Vec3::new(self.0[0], self.0[1], self.0[2])
    }

    pub fn v(&self) -> Vec3 {
        Vec3::new(self.0[3], self.0[4], self.0[5])
    }

    pub fn norm(&self) -> f64 {
        math::sqrt(self.0.iter().map(|x| x * x).sum())
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }

    pub fn basis(k: usize) -> Self {
        let mut e = [0.0; 6];
        e[k] = 1.0;
        Self(e)
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self(self.0.map(|x| x * s))
    }
}

impl core::ops::Add for TangentUpdate {
    type Output = TangentUpdate;

    fn add(self, rhs: Self) -> Self {
        let mut out = self.0;
        for (o, r) in out.iter_mut().zip(rhs.0) {
            *o += r;
        }
        Self(out)
    }
}

// Coefficients of the SO(3)/SE(3) exponential, with Taylor fallbacks near 0:
// a = sin θ / θ, b = (1 - cos θ) / θ², c = (θ - sin θ) / θ³.
fn exp_coefficients(theta: f64) -> (f64, f64, f64) {
    let t2 = theta * theta;
    if theta < 1e-4 {
        (
            1.0 - t2 / 6.0 + t2 * t2 / 120.0,
            0.5 - t2 / 24.0 + t2 * t2 / 720.0,
            1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0,
        )
    } else {
        let (s, c) = (math::sin(theta), math::cos(theta));
        (s / theta, (1.0 - c) / t2, (theta - s) / (t2 * theta))
    }
}

/// Closed-form SE(3) exponential (Rodrigues rotation and the V matrix).
pub fn se3_exp(xi: &TangentUpdate) -> CameraPose {
    let omega = xi.omega();
    let theta = omega.norm();
    let (a, b, c) = exp_coefficients(theta);
    let w = skew(&omega);
    let w2 = w * w;
    let rotation = Mat3::identity() + w * a + w2 * b;
    let v = Mat3::identity() + w * b + w2 * c;
    CameraPose {
        rotation,
        translation: v * xi.v(),
    }
}

/// Inverse of [`se3_exp`] for rotation angles below π.
pub fn se3_log(pose: &CameraPose) -> TangentUpdate {
    let r = &pose.rotation;
    let cos_theta = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let theta = libm::acos(cos_theta);
    let anti = math::vee_antisym(r);
    let omega = if theta < 1e-6 {
        // sin θ / θ ≈ 1
        anti * (1.0 + theta * theta / 6.0)
    } else {
        anti * (theta / math::sin(theta))
    };
    let w = skew(&omega);
    let w2 = w * w;
    // V⁻¹ = I - ½ ω^ + (1/θ²)(1 - a / (2b)) ω^²
    let k = if theta < 1e-4 {
        1.0 / 12.0 + theta * theta / 720.0
    } else {
        let (a, b, _) = exp_coefficients(theta);
        (1.0 - a / (2.0 * b)) / (theta * theta)
    };
    let v_inv = Mat3::identity() - w * 0.5 + w2 * k;
    TangentUpdate::new(omega, v_inv * pose.translation)
}

/// `μ_C = W μ + t`.
pub fn transform_to_camera(mu: &Vec3, pose: &CameraPose) -> Vec3 {
    pose.transform(mu)
}

/// Symmetric-frustum perspective matrix mapping camera space (negative-z
/// forward) to clip space.
pub fn projection_matrix(k: &CameraIntrinsics) -> Matrix4<f64> {
    let (n, f) = (k.near, k.far);
    let w = k.width as f64;
    let h = k.height as f64;
    Matrix4::new(
        2.0 * k.fx / w,
        0.0,
        0.0,
        0.0,
        0.0,
        2.0 * k.fy / h,
        0.0,
        0.0,
        0.0,
        0.0,
        -(f + n) / (f - n),
        -2.0 * f * n / (f - n),
        0.0,
        0.0,
        -1.0,
        0.0,
    )
}

/// Homogeneous clip coordinates of a positive-depth camera-space point.
pub fn clip_coordinates(mu_c: &Vec3, k: &CameraIntrinsics) -> Vector4<f64> {
    projection_matrix(k) * Vector4::new(mu_c.x, mu_c.y, -mu_c.z, 1.0)
}

/// Camera space → clip → NDC → viewport. `None` when the point is not in
/// front of the near plane.
pub fn project_point(mu_c: &Vec3, k: &CameraIntrinsics) -> Option<Vec2> {
    if !(mu_c.z > k.near) {
        return None;
    }
    let clip = clip_coordinates(mu_c, k);
    let x_ndc = clip.x / clip.w;
    let y_ndc = clip.y / clip.w;
    Some(Vec2::new(
        0.5 * k.width as f64 * x_ndc + k.cx,
        0.5 * k.height as f64 * y_ndc + k.cy,
    ))
}

/// Closed form of [`project_point`]: `u = f_x x / d + c_x`.
#[inline]
pub(crate) fn pinhole(mu_c: &Vec3, k: &CameraIntrinsics) -> Vec2 {
    Vec2::new(
        k.fx * mu_c.x / mu_c.z + k.cx,
        k.fy * mu_c.y / mu_c.z + k.cy,
    )
}

/// First-order Jacobian of the projection at `μ_C`.
pub fn affine_jacobian(mu_c: &Vec3, k: &CameraIntrinsics) -> Option<Mat2x3> {
    let d = mu_c.z;
    if !(d > 0.0) {
        return None;
    }
    let inv_d = 1.0 / d;
    let inv_d2 = inv_d * inv_d;
    Some(Mat2x3::new(
        k.fx * inv_d,
        0.0,
        -k.fx * mu_c.x * inv_d2,
        0.0,
        k.fy * inv_d,
        -k.fy * mu_c.y * inv_d2,
    ))
}

/// `Σ_I = J W Σ Wᵀ Jᵀ`, symmetrized.
pub fn project_covariance(sigma: &Mat3, pose: &CameraPose, j: &Mat2x3) -> Mat2 {
    let m = pose.rotation * sigma * pose.rotation.transpose();
    let s = j * m * j.transpose();
    0.5 * (s + s.transpose())
}

/// A surfel after projection into one view.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectedGaussian {
    /// Pixel-space center `μ_I`.
    pub mean: Vec2,
    /// Unregularized 2D covariance `Σ_I` (pixel²).
    pub cov: Mat2,
    /// Camera-space depth.
    pub depth: f64,
    /// Camera-space center `μ_C`.
    pub camera_center: Vec3,
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn k200() -> CameraIntrinsics {
        CameraIntrinsics::new(100.0, 100.0, 100.0, 100.0, 200, 200).unwrap()
    }

    fn rot_z(angle: f64) -> Mat3 {
        let (s, c) = (angle.sin(), angle.cos());
        Mat3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
    }

    #[test]
    fn transform_examples() {
        let id = CameraPose::identity();
        assert_eq!(transform_to_camera(&Vec3::new(1.0, 2.0, 3.0), &id), Vec3::new(1.0, 2.0, 3.0));
        let shift = CameraPose::new(Mat3::identity(), Vec3::new(0.0, 0.0, 5.0)).unwrap();
        assert_eq!(transform_to_camera(&Vec3::zeros(), &shift), Vec3::new(0.0, 0.0, 5.0));
        let rz = CameraPose::new(rot_z(core::f64::consts::FRAC_PI_2), Vec3::zeros()).unwrap();
        let p = transform_to_camera(&Vec3::x(), &rz);
        assert!((p - Vec3::y()).norm() < 1e-12);
    }

    #[test]
    fn projection_matrix_entries() {
        let k = CameraIntrinsics::new(320.0, 240.0, 320.0, 240.0, 640, 480).unwrap();
        let p = projection_matrix(&k);
        assert_eq!(p[(0, 0)], 1.0);
        assert_eq!(p[(1, 1)], 1.0);
        let k = k.with_clip(0.1, 100.0).unwrap();
        let p = projection_matrix(&k);
        assert_relative_eq!(p[(2, 2)], -100.1 / 99.9, epsilon = 1e-15);
        assert_relative_eq!(p[(2, 3)], -20.0 / 99.9, epsilon = 1e-15);
        assert_eq!(p[(3, 2)], -1.0);
    }

    #[test]
    fn project_point_examples() {
        let k = k200();
        let on_axis = project_point(&Vec3::new(0.0, 0.0, 7.5), &k).unwrap();
        assert_eq!(on_axis, Vec2::new(100.0, 100.0));
        let uv = project_point(&Vec3::new(0.5, 0.0, 2.0), &k).unwrap();
        assert_relative_eq!(uv.x, 125.0, epsilon = 1e-12);
        assert_relative_eq!(uv.y, 100.0, epsilon = 1e-12);
        // frustum edge: x = d W / (2 f_x) lands on u = W
        let d = 3.0;
        let edge = project_point(&Vec3::new(d * 200.0 / 200.0, 0.0, d), &k).unwrap();
        assert_relative_eq!(edge.x, 200.0, epsilon = 1e-12);
        assert!(project_point(&Vec3::new(0.0, 0.0, -1.0), &k).is_none());
        assert!(project_point(&Vec3::new(0.0, 0.0, 0.005), &k).is_none());
    }

    #[test]
    fn w_clip_equals_depth() {
        let k = k200();
        for d in [0.5, 2.0, 17.0, 99.0] {
            let clip = clip_coordinates(&Vec3::new(0.3, -0.2, d), &k);
            assert!((clip.w - d).abs() < 1e-12);
        }
    }

    #[test]
    fn jacobian_examples() {
        let k = k200();
        let j = affine_jacobian(&Vec3::new(0.0, 0.0, 2.0), &k).unwrap();
        assert_eq!(j, Mat2x3::new(50.0, 0.0, 0.0, 0.0, 50.0, 0.0));
        let j = affine_jacobian(&Vec3::new(1.0, 0.0, 2.0), &k).unwrap();
        assert_eq!(j, Mat2x3::new(50.0, 0.0, -25.0, 0.0, 50.0, 0.0));
        assert!(affine_jacobian(&Vec3::new(1.0, 0.0, 0.0), &k).is_none());
    }

    #[test]
    fn covariance_projection_examples() {
        let id = CameraPose::identity();
        let j = Mat2x3::new(50.0, 0.0, 0.0, 0.0, 50.0, 0.0);
        assert_eq!(project_covariance(&Mat3::zeros(), &id, &j), Mat2::zeros());
        let s = project_covariance(&Mat3::from_diagonal(&Vec3::new(4.0, 1.0, 0.0)), &id, &j);
        assert_eq!(s, Mat2::new(10000.0, 0.0, 0.0, 2500.0));
    }

    #[test]
    fn exp_examples() {
        let id = se3_exp(&TangentUpdate::default());
        assert_eq!(id, CameraPose::identity());
        let r = se3_exp(&TangentUpdate::new(
            Vec3::new(0.0, 0.0, core::f64::consts::FRAC_PI_2),
            Vec3::zeros(),
        ));
        assert!((r.rotation - rot_z(core::f64::consts::FRAC_PI_2)).amax() < 1e-12);
        assert_eq!(r.translation, Vec3::zeros());
    }

    #[test]
    fn intrinsics_validation() {
        assert!(CameraIntrinsics::new(0.0, 1.0, 0.0, 0.0, 4, 4).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 0.0, 0.0, 0, 4).is_err());
        let k = CameraIntrinsics::new(1.0, 1.0, 0.0, 0.0, 4, 4).unwrap();
        assert!(k.with_clip(1.0, 0.5).is_err());
        assert!(k.with_clip(0.0, 1.0).is_err());
    }

    #[test]
    fn fov_relation() {
        let k = CameraIntrinsics::new(100.0, 50.0, 100.0, 50.0, 200, 100).unwrap();
        assert_eq!(k.tan_half_fov_x(), 1.0);
        assert_eq!(k.tan_half_fov_y(), 1.0);
    }
}
