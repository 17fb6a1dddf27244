//! Analytic backward pass of [`render`](crate::raster::render).
//!
//! Per pixel the contributor list is walked back to front, carrying the color
//! and depth composited behind the current surfel, which gives `∂C/∂α_i`
//! without re-rendering. Image-space gradients (`μ_I`, conic, opacity, color,
//! depth) are accumulated per tile slot and reduced in tile-major order, then
//! pushed through the projection:
//!
//! ```text
//! Σ_I = J M Jᵀ,  M = W Σ Wᵀ,  u = f_x x / d + c_x,  v = f_y y / d + c_y
//! ```
//!
//! Intrinsic gradients collect both the `μ_I` path and the `J` path. Pose
//! gradients are expressed for a left perturbation `exp(ξ) · T` at `ξ = 0`.

use alloc::vec;
use alloc::vec::Vec;

use crate::camera::{CameraIntrinsics, CameraPose, TangentUpdate};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::math::{Mat2, Mat2x3, Mat3, Vec2, Vec3};
use crate::raster::{par_map, scene_fingerprint, RenderOutput, Splat};
use crate::surfel::{covariance_backward, SurfelScene};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SurfelGradient {
    pub color: Vec3,
    pub center: Vec3,
    pub scale: Vec2,
    /// Tangent to the unit sphere at the surfel normal.
    pub normal: Vec3,
    pub opacity: f64,
}

impl SurfelGradient {
    pub fn is_finite(&self) -> bool {
        self.color
            .iter()
            .chain(self.center.iter())
            .chain(self.scale.iter())
            .chain(self.normal.iter())
            .all(|v| v.is_finite())
            && self.opacity.is_finite()
    }

    fn add_assign(&mut self, o: &SurfelGradient) {
        self.color += o.color;
        self.center += o.center;
        self.scale += o.scale;
        self.normal += o.normal;
        self.opacity += o.opacity;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct IntrinsicsGradient {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl IntrinsicsGradient {
    pub fn as_array(&self) -> [f64; 4] {
        [self.fx, self.fy, self.cx, self.cy]
    }

    fn add_assign(&mut self, o: &IntrinsicsGradient) {
        self.fx += o.fx;
        self.fy += o.fy;
        self.cx += o.cx;
        self.cy += o.cy;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientBuffers {
    pub surfels: Vec<SurfelGradient>,
    pub intrinsics: IntrinsicsGradient,
    pub pose: TangentUpdate,
}

impl GradientBuffers {
    pub fn zeros(n: usize) -> Self {
        Self {
            surfels: vec![SurfelGradient::default(); n],
            intrinsics: IntrinsicsGradient::default(),
            pose: TangentUpdate::default(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.surfels.iter().all(SurfelGradient::is_finite)
            && self.intrinsics.as_array().iter().all(|v| v.is_finite())
            && self.pose.is_finite()
    }

    /// `self += other`, element-wise.
    pub fn accumulate(&mut self, other: &GradientBuffers) {
        debug_assert_eq!(self.surfels.len(), other.surfels.len());
        for (a, b) in self.surfels.iter_mut().zip(&other.surfels) {
            a.add_assign(b);
        }
        self.intrinsics.add_assign(&other.intrinsics);
        self.pose = self.pose + other.pose;
    }
}

/// Image-space gradient of one surfel.
#[derive(Debug, Clone, Copy, Default)]
struct ScreenGradient {
    mean: Vec2,
    /// w.r.t. conic entries `(a, b, c)` of `a dx² + 2b dx dy + c dy²`.
    conic: [f64; 3],
    opacity: f64,
    color: Vec3,
    depth: f64,
}

impl ScreenGradient {
    fn add_assign(&mut self, o: &ScreenGradient) {
        self.mean += o.mean;
        for k in 0..3 {
            self.conic[k] += o.conic[k];
        }
        self.opacity += o.opacity;
        self.color += o.color;
        self.depth += o.depth;
    }
}

fn check_pairing(scene: &SurfelScene, k: &CameraIntrinsics, pose: &CameraPose, out: &RenderOutput) -> Result<()> {
    if out.splats.len() != scene.len() {
        return Err(Error::StaleRender("surfel count"));
    }
    if out.scene_generation != scene.generation() || out.scene_fingerprint != scene_fingerprint(scene) {
        return Err(Error::StaleRender("scene changed since render"));
    }
    if out.intrinsics != *k {
        return Err(Error::StaleRender("intrinsics"));
    }
    if out.pose != *pose {
        return Err(Error::StaleRender("pose"));
    }
    Ok(())
}

fn tile_backward(tile: usize, out: &RenderOutput, d_color: Option<&Image>, d_depth: Option<&Image>) -> Vec<ScreenGradient> {
    let width = out.width();
    let height = out.height();
    let list = &out.bins.lists[tile];
    let mut grads = vec![ScreenGradient::default(); list.len()];
    let (xs, ys) = out.bins.tile_pixels(tile, width, height);
    for y in ys {
        for x in xs.clone() {
            let contributors = out.pixel_contributors(x, y);
            if contributors.is_empty() {
                continue;
            }
            let gc = d_color.map_or(Vec3::zeros(), |img| {
                let p = img.pixel(x, y);
                Vec3::new(p[0], p[1], p[2])
            });
            let gd = d_depth.map_or(0.0, |img| img.get(x, y, 0));
            if gc == Vec3::zeros() && gd == 0.0 {
                continue;
            }
            let pixel = Vec2::new(x as f64 + 0.5, y as f64 + 0.5);
            // what is composited behind the current contributor
            let mut behind_color = Vec3::zeros();
            let mut behind_depth = 0.0;
            for c in contributors.iter().rev() {
                let s: &Splat = out.splats[c.surfel as usize].as_ref().unwrap();
                let g = &mut grads[c.slot as usize];
                let w = c.alpha * c.transmittance;
                g.color += gc * w;
                g.depth += gd * w;
                let d_alpha = c.transmittance * (gc.dot(&(s.color - behind_color)) + gd * (s.depth - behind_depth));
                behind_color = s.color * c.alpha + behind_color * (1.0 - c.alpha);
                behind_depth = s.depth * c.alpha + behind_depth * (1.0 - c.alpha);
                if c.clamped {
                    continue;
                }
                let delta = pixel - s.mean;
                let gaussian = c.alpha / s.opacity;
                g.opacity += d_alpha * gaussian;
                // α = o exp(-q/2)
                let d_q = -0.5 * c.alpha * d_alpha;
                let conic = s.conic;
                let q_delta = Vec2::new(conic.a * delta.x + conic.b * delta.y, conic.b * delta.x + conic.c * delta.y);
                g.mean += -2.0 * d_q * q_delta;
                g.conic[0] += d_q * delta.x * delta.x;
                g.conic[1] += d_q * 2.0 * delta.x * delta.y;
                g.conic[2] += d_q * delta.y * delta.y;
            }
        }
    }
    grads
}

struct ProjectionGradient {
    surfel: SurfelGradient,
    intrinsics: IntrinsicsGradient,
    /// Left-perturbation rotational and translational pose gradient.
    omega: Vec3,
    translation: Vec3,
}

fn projection_backward(
    surfel_index: usize,
    scene: &SurfelScene,
    s: &Splat,
    g: &ScreenGradient,
    k: &CameraIntrinsics,
    pose: &CameraPose,
) -> ProjectionGradient {
    let surfel = &scene.surfels()[surfel_index];
    let (x, y, d) = (s.camera_center.x, s.camera_center.y, s.camera_center.z);
    let inv_d = 1.0 / d;
    let inv_d2 = inv_d * inv_d;
    let inv_d3 = inv_d2 * inv_d;

    // conic = (Σ_I + δI)⁻¹  =>  dL/dΣ_I = -Q G Q
    let q = s.conic.matrix();
    let g_conic = Mat2::new(g.conic[0], 0.5 * g.conic[1], 0.5 * g.conic[1], g.conic[2]);
    let g_cov2d = -(q * g_conic * q);

    // Σ_I = J M Jᵀ
    let j = &s.jacobian;
    let g_j: Mat2x3 = 2.0 * g_cov2d * j * s.camera_cov;
    let g_m: Mat3 = j.transpose() * g_cov2d * j;
    // M = W Σ Wᵀ
    let w = &pose.rotation;
    let g_sigma = w.transpose() * g_m * w;
    let mut g_w: Mat3 = 2.0 * g_m * w * s.world_cov;

    let mut g_cam = Vec3::zeros();
    let mut gk = IntrinsicsGradient::default();

    // J entries
    g_cam.x += g_j[(0, 2)] * (-k.fx * inv_d2);
    g_cam.y += g_j[(1, 2)] * (-k.fy * inv_d2);
    g_cam.z += g_j[(0, 0)] * (-k.fx * inv_d2)
        + g_j[(0, 2)] * (2.0 * k.fx * x * inv_d3)
        + g_j[(1, 1)] * (-k.fy * inv_d2)
        + g_j[(1, 2)] * (2.0 * k.fy * y * inv_d3);
    gk.fx += g_j[(0, 0)] * inv_d - g_j[(0, 2)] * x * inv_d2;
    gk.fy += g_j[(1, 1)] * inv_d - g_j[(1, 2)] * y * inv_d2;

    // μ_I
    let gm = g.mean;
    g_cam.x += gm.x * k.fx * inv_d;
    g_cam.y += gm.y * k.fy * inv_d;
    g_cam.z += -gm.x * k.fx * x * inv_d2 - gm.y * k.fy * y * inv_d2;
    gk.fx += gm.x * x * inv_d;
    gk.fy += gm.y * y * inv_d;
    gk.cx += gm.x;
    gk.cy += gm.y;

    // composited depth
    g_cam.z += g.depth;

    // μ_C = W μ + t
    let g_center = w.transpose() * g_cam;
    g_w += g_cam * surfel.center.transpose();

    let (g_scale, g_normal) = covariance_backward(&surfel.normal, &s.frame, &surfel.scale, &g_sigma);

    // left perturbation: δW = ω^ W, δt = ω × t + v
    let a = w * g_w.transpose();
    let mut omega = Vec3::new(a[(1, 2)] - a[(2, 1)], a[(2, 0)] - a[(0, 2)], a[(0, 1)] - a[(1, 0)]);
    omega += pose.translation.cross(&g_cam);

    ProjectionGradient {
        surfel: SurfelGradient {
            color: g.color,
            center: g_center,
            scale: g_scale,
            normal: g_normal,
            opacity: g.opacity,
        },
        intrinsics: gk,
        omega,
        translation: g_cam,
    }
}

/// Gradients of `⟨d_color, C⟩ + ⟨d_depth, D⟩` w.r.t. every parameter group.
///
/// `render_out` must come from `render(scene, k, pose, _)` with the very same
/// arguments; otherwise [`Error::StaleRender`] is returned. Either cotangent
/// may be `None` (treated as zero).
pub fn backward(
    scene: &SurfelScene,
    k: &CameraIntrinsics,
    pose: &CameraPose,
    render_out: &RenderOutput,
    d_color: Option<&Image>,
    d_depth: Option<&Image>,
) -> Result<GradientBuffers> {
    check_pairing(scene, k, pose, render_out)?;
    let (w, h) = (render_out.width(), render_out.height());
    if let Some(dc) = d_color {
        render_out.color.ensure_same_shape(dc)?;
    }
    if let Some(dd) = d_depth {
        if dd.width() != w || dd.height() != h || dd.channels() != 1 {
            return Err(Error::DimensionMismatch(w, h, 1, dd.width(), dd.height(), dd.channels()));
        }
    }

    let n = scene.len();
    let per_tile = par_map(render_out.bins.lists.len(), |t| tile_backward(t, render_out, d_color, d_depth));
    let mut screen = vec![ScreenGradient::default(); n];
    let mut touched = vec![false; n];
    for (t, grads) in per_tile.iter().enumerate() {
        for (slot, g) in grads.iter().enumerate() {
            let i = render_out.bins.lists[t][slot] as usize;
            screen[i].add_assign(g);
            touched[i] = true;
        }
    }

    let projected = par_map(n, |i| match (&render_out.splats[i], touched[i]) {
        (Some(s), true) => Some(projection_backward(i, scene, s, &screen[i], k, pose)),
        _ => None,
    });

    let mut out = GradientBuffers::zeros(n);
    let mut omega = Vec3::zeros();
    let mut trans = Vec3::zeros();
    for (i, p) in projected.into_iter().enumerate() {
        if let Some(p) = p {
            out.surfels[i] = p.surfel;
            out.intrinsics.add_assign(&p.intrinsics);
            omega += p.omega;
            trans += p.translation;
        }
    }
    out.pose = TangentUpdate::new(omega, trans);
    Ok(out)
}
