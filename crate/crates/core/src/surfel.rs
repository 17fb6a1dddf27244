//! Gaussian surfels, their tangent frames and world-space covariances.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math::{Mat3, Vec2, Vec3};

const UNIT_TOL: f64 = 1e-9;
/// Above this |n_z| the frame is seeded from the x axis instead of z.
const POLE_THRESHOLD: f64 = 0.9;

/// One pixel-aligned surfel: 12 scalars.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianSurfel {
    /// RGB in `[0, 1]`.
    pub color: Vec3,
    pub center: Vec3,
    /// In-plane standard deviations `(s_x, s_y)`, both positive.
    pub scale: Vec2,
    /// Unit normal; the null direction of the covariance.
    pub normal: Vec3,
    pub opacity: f64,
}

impl GaussianSurfel {
    pub fn validate(&self) -> core::result::Result<(), &'static str> {
        let all_finite = self
            .color
            .iter()
            .chain(self.center.iter())
            .chain(self.scale.iter())
            .chain(self.normal.iter())
            .all(|v| v.is_finite())
            && self.opacity.is_finite();
        if !all_finite {
            return Err("non-finite parameter");
        }
        if (self.normal.norm() - 1.0).abs() > UNIT_TOL {
            return Err("normal is not unit length");
        }
        if self.scale.x <= 0.0 || self.scale.y <= 0.0 {
            return Err("scale must be positive");
        }
        if !(0.0..=1.0).contains(&self.opacity) {
            return Err("opacity outside [0, 1]");
        }
        if self.color.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err("color outside [0, 1]");
        }
        Ok(())
    }

    pub fn frame(&self) -> Result<SurfelFrame> {
        build_frame(&self.normal)
    }
}

/// Right-handed orthonormal frame `[n1 n2 n]` attached to a surfel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfelFrame {
    pub n1: Vec3,
    pub n2: Vec3,
    pub n: Vec3,
}

impl SurfelFrame {
    pub fn rotation(&self) -> Mat3 {
        Mat3::from_columns(&[self.n1, self.n2, self.n])
    }
}

fn seed_axis(n: &Vec3) -> Vec3 {
    if n.z.abs() < POLE_THRESHOLD {
        Vec3::z()
    } else {
        Vec3::y()
    }
}

/// Builds the tangent frame of a normal.
///
/// `n1 = normalize(a x n)` with `a = z` away from the poles and `a = y` near
/// them, and `n2 = n x n1`, which makes the frame a proper rotation. The input
/// is normalized first, so gradients through the frame are tangent to the
/// sphere.
pub fn build_frame(n: &Vec3) -> Result<SurfelFrame> {
    if !crate::math::is_finite3(n) {
        return Err(Error::InvalidNormal("non-finite component"));
    }
    let len = n.norm();
    if len == 0.0 {
        return Err(Error::InvalidNormal("zero vector"));
    }
    let n = n / len;
    let n1 = seed_axis(&n).cross(&n).normalize();
    let n2 = n.cross(&n1);
    Ok(SurfelFrame { n1, n2, n })
}

/// `Σ = R · diag(s_x², s_y², 0) · Rᵀ`.
pub fn covariance_world(surfel: &GaussianSurfel) -> Result<Mat3> {
    let frame = surfel.frame()?;
    Ok(covariance_from_frame(&frame, &surfel.scale))
}

pub(crate) fn covariance_from_frame(frame: &SurfelFrame, scale: &Vec2) -> Mat3 {
    let sx2 = scale.x * scale.x;
    let sy2 = scale.y * scale.y;
    let sigma = frame.n1 * frame.n1.transpose() * sx2 + frame.n2 * frame.n2.transpose() * sy2;
    0.5 * (sigma + sigma.transpose())
}

/// Pulls an upstream `dL/dΣ` back to the scale and (raw) normal.
pub(crate) fn covariance_backward(
    normal: &Vec3,
    frame: &SurfelFrame,
    scale: &Vec2,
    d_sigma: &Mat3,
) -> (Vec2, Vec3) {
    let g = 0.5 * (d_sigma + d_sigma.transpose());
    let gn1 = g * frame.n1;
    let gn2 = g * frame.n2;
    let d_scale = Vec2::new(
        2.0 * scale.x * frame.n1.dot(&gn1),
        2.0 * scale.y * frame.n2.dot(&gn2),
    );
    let d_n1 = 2.0 * scale.x * scale.x * gn1;
    let d_n2 = 2.0 * scale.y * scale.y * gn2;
    (d_scale, frame_backward(normal, frame, &d_n1, &d_n2))
}

/// Chain rule through `n -> (n1, n2)` of [`build_frame`].
fn frame_backward(normal: &Vec3, frame: &SurfelFrame, d_n1: &Vec3, d_n2: &Vec3) -> Vec3 {
    let len = normal.norm();
    let n_hat = frame.n;
    let a = seed_axis(&n_hat);
    let u = a.cross(&n_hat);
    let u_len = u.norm();

    // n2 = n_hat x n1
    let mut d_nhat = frame.n1.cross(d_n2);
    let d_n1_total = d_n1 + d_n2.cross(&n_hat);
    // n1 = u / |u|
    let d_u = (d_n1_total - frame.n1 * frame.n1.dot(&d_n1_total)) / u_len;
    // u = a x n_hat
    d_nhat += d_u.cross(&a);
    // n_hat = n / |n|
    (d_nhat - n_hat * n_hat.dot(&d_nhat)) / len
}

/// Ordered surfel set plus optional per-surfel prior normals.
///
/// Gradients are addressed by index, so the order never changes. Every
/// mutable access bumps [`SurfelScene::generation`], which lets the backward
/// pass reject render outputs computed from an older state.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfelScene {
    surfels: Vec<GaussianSurfel>,
    prior_normals: Option<Vec<Vec3>>,
    generation: u64,
}

impl SurfelScene {
    pub fn new(surfels: Vec<GaussianSurfel>) -> Result<Self> {
        for (index, s) in surfels.iter().enumerate() {
            s.validate()
                .map_err(|reason| Error::InvalidSurfel { index, reason })?;
        }
        Ok(Self {
            surfels,
            prior_normals: None,
            generation: 0,
        })
    }

    pub fn with_prior_normals(mut self, priors: Vec<Vec3>) -> Result<Self> {
        if priors.len() != self.surfels.len() {
            return Err(Error::InvalidSurfel {
                index: priors.len().min(self.surfels.len()),
                reason: "prior normal count differs from surfel count",
            });
        }
        for (index, p) in priors.iter().enumerate() {
            if !crate::math::is_finite3(p) || (p.norm() - 1.0).abs() > UNIT_TOL {
                return Err(Error::InvalidSurfel {
                    index,
                    reason: "prior normal is not unit length",
                });
            }
        }
        self.prior_normals = Some(priors);
        Ok(self)
    }

    pub fn surfels(&self) -> &[GaussianSurfel] {
        &self.surfels
    }

    pub fn surfels_mut(&mut self) -> &mut [GaussianSurfel] {
        self.generation += 1;
        &mut self.surfels
    }

    pub fn prior_normals(&self) -> Option<&[Vec3]> {
        self.prior_normals.as_deref()
    }

    pub fn len(&self) -> usize {
        self.surfels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.surfels.is_empty()
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn into_surfels(self) -> Vec<GaussianSurfel> {
        self.surfels
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::SymmetricEigen;

    fn surfel(normal: Vec3, scale: Vec2) -> GaussianSurfel {
        GaussianSurfel {
            color: Vec3::new(0.5, 0.5, 0.5),
            center: Vec3::new(0.0, 0.0, 3.0),
            scale,
            normal,
            opacity: 0.8,
        }
    }

    #[test]
    fn frame_of_z_axis_is_identity() {
        let f = build_frame(&Vec3::z()).unwrap();
        assert_eq!(f.n1, Vec3::x());
        assert_eq!(f.n2, Vec3::y());
        assert_eq!(f.rotation(), Mat3::identity());
    }

    #[test]
    fn frame_of_x_axis_is_a_rotation() {
        let f = build_frame(&Vec3::x()).unwrap();
        let r = f.rotation();
        assert!((r * r.transpose() - Mat3::identity()).norm() < 1e-12);
        assert!((r.determinant() - 1.0).abs() < 1e-12);
        assert_eq!(r.column(2).into_owned(), Vec3::x());
    }

    #[test]
    fn frame_of_diagonal_normal() {
        let n = Vec3::new(1.0, 1.0, 1.0) / 3f64.sqrt();
        let f = build_frame(&n).unwrap();
        let r = f.rotation();
        assert!((r * r.transpose() - Mat3::identity()).norm() < 1e-12);
        assert!((r.determinant() - 1.0).abs() < 1e-12);
        assert!(f.n1.dot(&n).abs() < 1e-12 && f.n2.dot(&n).abs() < 1e-12);
    }

    #[test]
    fn frame_rejects_degenerate_normals() {
        assert!(build_frame(&Vec3::zeros()).is_err());
        assert!(build_frame(&Vec3::new(f64::NAN, 0.0, 1.0)).is_err());
        assert!(build_frame(&Vec3::new(f64::INFINITY, 0.0, 1.0)).is_err());
    }

    #[test]
    fn axis_aligned_covariance() {
        let s = covariance_world(&surfel(Vec3::z(), Vec2::new(2.0, 1.0))).unwrap();
        assert_eq!(s, Mat3::from_diagonal(&Vec3::new(4.0, 1.0, 0.0)));
        let s = covariance_world(&surfel(Vec3::z(), Vec2::new(1.0, 1.0))).unwrap();
        assert_eq!(s, Mat3::from_diagonal(&Vec3::new(1.0, 1.0, 0.0)));
    }

    #[test]
    fn tilted_covariance_spectrum() {
        let n = Vec3::new(0.3, -0.5, 0.8).normalize();
        let s = covariance_world(&surfel(n, Vec2::new(2.0, 1.0))).unwrap();
        assert!((s * n).norm() < 1e-9);
        let mut ev: Vec<f64> = SymmetricEigen::new(s).eigenvalues.iter().copied().collect();
        ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!((ev[0] - 0.0).abs() < 1e-9);
        assert!((ev[1] - 1.0).abs() < 1e-9);
        assert!((ev[2] - 4.0).abs() < 1e-9);
    }

    #[test]
    fn scene_rejects_invalid_surfels() {
        let mut bad = surfel(Vec3::z(), Vec2::new(1.0, 1.0));
        bad.opacity = 1.5;
        assert!(matches!(
            SurfelScene::new(alloc::vec![bad]),
            Err(Error::InvalidSurfel { index: 0, .. })
        ));
        let mut bad = surfel(Vec3::new(0.0, 0.0, 2.0), Vec2::new(1.0, 1.0));
        assert!(SurfelScene::new(alloc::vec![bad]).is_err());
        bad.normal = Vec3::z();
        bad.scale.y = 0.0;
        assert!(SurfelScene::new(alloc::vec![bad]).is_err());
    }

    #[test]
    fn mutable_access_bumps_generation() {
        let mut scene = SurfelScene::new(alloc::vec![surfel(Vec3::z(), Vec2::new(1.0, 1.0))]).unwrap();
        assert_eq!(scene.generation(), 0);
        scene.surfels_mut()[0].opacity = 0.5;
        assert_eq!(scene.generation(), 1);
    }

    #[test]
    fn frame_backward_matches_finite_differences() {
        // L = a·n1 + b·n2 through the normalized frame.
        let a = Vec3::new(0.4, -1.1, 0.7);
        let b = Vec3::new(-0.2, 0.9, 1.3);
        let loss = |n: &Vec3| {
            let f = build_frame(n).unwrap();
            a.dot(&f.n1) + b.dot(&f.n2)
        };
        for n in [
            Vec3::new(0.2, 0.3, -0.93),
            Vec3::new(0.6, -0.5, 0.3),
            Vec3::new(-0.7, 0.1, 0.4),
        ] {
            let n = n.normalize();
            let f = build_frame(&n).unwrap();
            let g = frame_backward(&n, &f, &a, &b);
            for k in 0..3 {
                let h = 1e-6;
                let mut p = n;
                p[k] += h;
                let mut m = n;
                m[k] -= h;
                let fd = (loss(&p) - loss(&m)) / (2.0 * h);
                assert!((fd - g[k]).abs() < 1e-8, "{k}: {fd} vs {}", g[k]);
            }
            assert!(g.dot(&n).abs() < 1e-12);
        }
    }
}
