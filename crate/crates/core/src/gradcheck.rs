//! Central finite differences and the randomized gradient-check suite.
//!
//! The suite renders random small scenes, takes `L = Σ C_p² + Σ D_p²` as the
//! scalar loss and compares every analytic parameter gradient against
//! `(L(x + h) − L(x − h)) / 2h`. Whenever a perturbation changes which
//! surfels contribute to a pixel (support radius, alpha cutoff, opacity
//! clamp, early termination or depth order), that pixel is removed from both
//! sides of the comparison for that parameter and counted as excluded.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::camera::{se3_exp, CameraIntrinsics, CameraPose, TangentUpdate};
use crate::error::Result;
use crate::gradients::{backward, GradientBuffers};
use crate::image::Image;
use crate::math::{Vec2, Vec3};
use crate::raster::{render, RasterConfig, RenderOutput};
use crate::surfel::{GaussianSurfel, SurfelScene};

/// `(f(+h) − f(−h)) / 2h`, or `None` if either evaluation is not finite.
pub fn central_difference(mut f: impl FnMut(f64) -> f64, h: f64) -> Option<f64> {
    let plus = f(h);
    let minus = f(-h);
    if plus.is_finite() && minus.is_finite() {
        Some((plus - minus) / (2.0 * h))
    } else {
        None
    }
}

/// Parameter groups of the check, in report order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ParamGroup {
    Color,
    Opacity,
    Scale,
    Normal,
    Center,
    Fx,
    Fy,
    Cx,
    Cy,
    Pose,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 10] = [
        ParamGroup::Color,
        ParamGroup::Opacity,
        ParamGroup::Scale,
        ParamGroup::Normal,
        ParamGroup::Center,
        ParamGroup::Fx,
        ParamGroup::Fy,
        ParamGroup::Cx,
        ParamGroup::Cy,
        ParamGroup::Pose,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ParamGroup::Color => "c",
            ParamGroup::Opacity => "o",
            ParamGroup::Scale => "s",
            ParamGroup::Normal => "n",
            ParamGroup::Center => "mu",
            ParamGroup::Fx => "fx",
            ParamGroup::Fy => "fy",
            ParamGroup::Cx => "cx",
            ParamGroup::Cy => "cy",
            ParamGroup::Pose => "xi",
        }
    }
}

/// One scalar parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Param {
    Color(usize, usize),
    Opacity(usize),
    Scale(usize, usize),
    /// Axis `k` of the normal, renormalized after the perturbation.
    Normal(usize, usize),
    Center(usize, usize),
    Fx,
    Fy,
    Cx,
    Cy,
    /// Tangent direction `k` of a left pose perturbation.
    Pose(usize),
}

impl Param {
    pub fn group(&self) -> ParamGroup {
        match self {
            Param::Color(..) => ParamGroup::Color,
            Param::Opacity(_) => ParamGroup::Opacity,
            Param::Scale(..) => ParamGroup::Scale,
            Param::Normal(..) => ParamGroup::Normal,
            Param::Center(..) => ParamGroup::Center,
            Param::Fx => ParamGroup::Fx,
            Param::Fy => ParamGroup::Fy,
            Param::Cx => ParamGroup::Cx,
            Param::Cy => ParamGroup::Cy,
            Param::Pose(_) => ParamGroup::Pose,
        }
    }

    /// Every scalar parameter of a scene with `n` surfels.
    pub fn enumerate(n: usize) -> Vec<Param> {
        let mut out = Vec::with_capacity(12 * n + 10);
        for i in 0..n {
            out.extend((0..3).map(|c| Param::Color(i, c)));
            out.push(Param::Opacity(i));
            out.extend((0..2).map(|c| Param::Scale(i, c)));
            out.extend((0..3).map(|c| Param::Normal(i, c)));
            out.extend((0..3).map(|c| Param::Center(i, c)));
        }
        out.extend([Param::Fx, Param::Fy, Param::Cx, Param::Cy]);
        out.extend((0..6).map(Param::Pose));
        out
    }

    /// The analytic counterpart inside a [`GradientBuffers`].
    pub fn analytic(&self, g: &GradientBuffers) -> f64 {
        match *self {
            Param::Color(i, c) => g.surfels[i].color[c],
            Param::Opacity(i) => g.surfels[i].opacity,
            Param::Scale(i, c) => g.surfels[i].scale[c],
            Param::Normal(i, c) => g.surfels[i].normal[c],
            Param::Center(i, c) => g.surfels[i].center[c],
            Param::Fx => g.intrinsics.fx,
            Param::Fy => g.intrinsics.fy,
            Param::Cx => g.intrinsics.cx,
            Param::Cy => g.intrinsics.cy,
            Param::Pose(k) => g.pose.0[k],
        }
    }

    /// Current value, used to scale the step.
    fn magnitude(&self, scene: &SurfelScene, k: &CameraIntrinsics) -> f64 {
        let s = scene.surfels();
        match *self {
            Param::Scale(i, c) => s[i].scale[c],
            Param::Center(i, c) => s[i].center[c].abs().max(1.0),
            Param::Fx => k.fx,
            Param::Fy => k.fy,
            _ => 1.0,
        }
    }

    /// Copies of the inputs with this parameter moved by `h`.
    ///
    /// Normals are renormalized and colors/opacity are not clamped, so the
    /// perturbed surfel may sit slightly outside its validity box.
    pub fn perturb(
        &self,
        scene: &SurfelScene,
        k: &CameraIntrinsics,
        pose: &CameraPose,
        h: f64,
    ) -> (SurfelScene, CameraIntrinsics, CameraPose) {
        let mut scene = scene.clone();
        let mut k = *k;
        let mut pose = *pose;
        match *self {
            Param::Color(i, c) => scene.surfels_mut()[i].color[c] += h,
            Param::Opacity(i) => scene.surfels_mut()[i].opacity += h,
            Param::Scale(i, c) => scene.surfels_mut()[i].scale[c] += h,
            Param::Normal(i, c) => {
                let s = &mut scene.surfels_mut()[i];
                s.normal[c] += h;
                s.normal = s.normal.normalize();
            }
            Param::Center(i, c) => scene.surfels_mut()[i].center[c] += h,
            Param::Fx => k.fx += h,
            Param::Fy => k.fy += h,
            Param::Cx => k.cx += h,
            Param::Cy => k.cy += h,
            Param::Pose(j) => pose = se3_exp(&TangentUpdate::basis(j).scaled(h)).compose(&pose),
        }
        (scene, k, pose)
    }
}

/// Finite-difference estimate of `∂loss/∂param`.
///
/// Returns `None` when the loss is not finite at a perturbed point.
pub fn finite_difference_oracle<F>(
    mut loss: F,
    scene: &SurfelScene,
    k: &CameraIntrinsics,
    pose: &CameraPose,
    param: Param,
    h: f64,
) -> Option<f64>
where
    F: FnMut(&SurfelScene, &CameraIntrinsics, &CameraPose) -> f64,
{
    central_difference(
        |dh| {
            let (s, kk, p) = param.perturb(scene, k, pose, dh);
            loss(&s, &kk, &p)
        },
        h,
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradcheckConfig {
    pub scenes: usize,
    pub surfels: usize,
    pub width: u32,
    pub height: u32,
    /// Relative step; the absolute step is `step · magnitude(param)`.
    pub step: f64,
    pub tolerance: f64,
    /// Gradients are compared relative to `max(|a|, |fd|, floor)`.
    pub floor: f64,
    pub max_excluded_fraction: f64,
    pub seed: u64,
    pub raster: RasterConfig,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            scenes: 20,
            surfels: 64,
            width: 32,
            height: 32,
            step: 1e-5,
            tolerance: 1e-5,
            floor: 1e-2,
            max_excluded_fraction: 0.05,
            seed: 0,
            raster: RasterConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupReport {
    pub group: ParamGroup,
    pub max_rel_err: f64,
    pub mean_rel_err: f64,
    /// Mean over scenes of the fraction of pixels excluded for at least one
    /// parameter of the group.
    pub excluded_fraction: f64,
    pub checked: usize,
    /// Parameters whose loss was not finite at a perturbed point.
    pub unverifiable: usize,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub groups: Vec<GroupReport>,
    pub passed: bool,
}

/// Random scene in front of a random camera, for gradient checks.
pub fn random_problem(rng: &mut ChaCha8Rng, surfels: usize, width: u32, height: u32) -> (SurfelScene, CameraIntrinsics, CameraPose) {
    let (wf, hf) = (width as f64, height as f64);
    let fx = wf * rng.random_range(0.85..1.25);
    let fy = hf * rng.random_range(0.85..1.25);
    let k = CameraIntrinsics::new(
        fx,
        fy,
        wf * 0.5 + rng.random_range(-2.0..2.0),
        hf * 0.5 + rng.random_range(-2.0..2.0),
        width,
        height,
    )
    .expect("valid random intrinsics");
    let axis = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    let angle = rng.random_range(0.0..0.15);
    let omega = if axis.norm() > 1e-3 { axis.normalize() * angle } else { Vec3::zeros() };
    let v = Vec3::new(rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2));
    let pose = se3_exp(&TangentUpdate::new(omega, v));
    let to_world = pose.inverse();

    let list = (0..surfels)
        .map(|_| {
            let u = rng.random_range(-2.0..wf + 2.0);
            let vv = rng.random_range(-2.0..hf + 2.0);
            let d = rng.random_range(2.0..5.0);
            let center = to_world.transform(&k.unproject(u, vv, d));
            let sigma_px = Vec2::new(rng.random_range(0.6..3.0), rng.random_range(0.6..3.0));
            let scale = sigma_px * (d / fx);
            // facing the camera within 60°, away from the frame seed switch at |n_z| = 0.9
            let normal = loop {
                let n = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), -rng.random_range(0.5..1.0)).normalize();
                let nz = (to_world.rotation * n).z.abs();
                if !(0.85..=0.95).contains(&nz) {
                    break to_world.rotation * n;
                }
            };
            GaussianSurfel {
                color: Vec3::new(rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()),
                center,
                scale,
                normal,
                opacity: rng.random_range(0.05..1.0),
            }
        })
        .collect();
    (SurfelScene::new(list).expect("valid random scene"), k, pose)
}

fn pixel_loss(out: &RenderOutput, p: usize) -> f64 {
    let c = &out.color.data()[3 * p..3 * p + 3];
    let d = out.depth.data()[p];
    c.iter().map(|v| v * v).sum::<f64>() + d * d
}

fn masked_loss(out: &RenderOutput, excluded: &[bool]) -> f64 {
    (0..excluded.len()).filter(|&p| !excluded[p]).map(|p| pixel_loss(out, p)).sum()
}

fn same_signature(a: &RenderOutput, b: &RenderOutput, p: usize) -> bool {
    let (x, y) = (p % a.width(), p / a.width());
    let ca = a.pixel_contributors(x, y);
    let cb = b.pixel_contributors(x, y);
    ca.len() == cb.len() && ca.iter().zip(cb).all(|(u, v)| u.surfel == v.surfel && u.clamped == v.clamped)
}

fn cotangents(out: &RenderOutput, excluded: &[bool]) -> (Image, Image) {
    let mut dc = out.color.clone();
    dc.scale(2.0);
    let mut dd = out.depth.clone();
    dd.scale(2.0);
    for (p, &ex) in excluded.iter().enumerate() {
        if ex {
            dc.data_mut()[3 * p..3 * p + 3].iter_mut().for_each(|v| *v = 0.0);
            dd.data_mut()[p] = 0.0;
        }
    }
    (dc, dd)
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

#[derive(Default, Clone)]
struct GroupAccum {
    max: f64,
    sum: f64,
    count: usize,
    unverifiable: usize,
    excluded_sum: f64,
}

/// Runs the full randomized check.
pub fn run_gradcheck(cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut acc = vec![GroupAccum::default(); ParamGroup::ALL.len()];
    let pixels = cfg.width as usize * cfg.height as usize;

    for _ in 0..cfg.scenes {
        let (scene, k, pose) = random_problem(&mut rng, cfg.surfels, cfg.width, cfg.height);
        let base = render(&scene, &k, &pose, &cfg.raster)?;
        let none = vec![false; pixels];
        let (dc, dd) = cotangents(&base, &none);
        let full = backward(&scene, &k, &pose, &base, Some(&dc), Some(&dd))?;
        let mut group_excluded = vec![vec![false; pixels]; ParamGroup::ALL.len()];

        for param in Param::enumerate(scene.len()) {
            let gi = ParamGroup::ALL.iter().position(|g| *g == param.group()).unwrap();
            let h = cfg.step * param.magnitude(&scene, &k);
            let (sp, kp, pp) = param.perturb(&scene, &k, &pose, h);
            let (sm, km, pm) = param.perturb(&scene, &k, &pose, -h);
            let (Ok(plus), Ok(minus)) = (render(&sp, &kp, &pp, &cfg.raster), render(&sm, &km, &pm, &cfg.raster)) else {
                acc[gi].unverifiable += 1;
                continue;
            };
            let excluded: Vec<bool> = (0..pixels)
                .map(|p| !same_signature(&base, &plus, p) || !same_signature(&base, &minus, p))
                .collect();
            let any_excluded = excluded.iter().any(|&e| e);
            let numeric = (masked_loss(&plus, &excluded) - masked_loss(&minus, &excluded)) / (2.0 * h);
            if !numeric.is_finite() {
                acc[gi].unverifiable += 1;
                continue;
            }
            let analytic = if any_excluded {
                let (dcm, ddm) = cotangents(&base, &excluded);
                param.analytic(&backward(&scene, &k, &pose, &base, Some(&dcm), Some(&ddm))?)
            } else {
                param.analytic(&full)
            };
            for (u, e) in group_excluded[gi].iter_mut().zip(&excluded) {
                *u |= *e;
            }
            let err = relative_error(analytic, numeric, cfg.floor);
            let a = &mut acc[gi];
            a.max = a.max.max(err);
            a.sum += err;
            a.count += 1;
        }
        for (gi, ex) in group_excluded.iter().enumerate() {
            acc[gi].excluded_sum += ex.iter().filter(|&&e| e).count() as f64 / pixels as f64;
        }
    }

    let groups: Vec<GroupReport> = ParamGroup::ALL
        .iter()
        .zip(acc)
        .map(|(&group, a)| {
            let excluded_fraction = a.excluded_sum / cfg.scenes.max(1) as f64;
            let passed = a.count > 0 && a.unverifiable == 0 && a.max < cfg.tolerance && excluded_fraction < cfg.max_excluded_fraction;
            GroupReport {
                group,
                max_rel_err: a.max,
                mean_rel_err: if a.count > 0 { a.sum / a.count as f64 } else { 0.0 },
                excluded_fraction,
                checked: a.count,
                unverifiable: a.unverifiable,
                passed,
            }
        })
        .collect();
    let passed = groups.iter().all(|g| g.passed);
    Ok(GradcheckReport { groups, passed })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_probe() {
        let x0: f64 = 3.0;
        let d = central_difference(|h| (x0 + h) * (x0 + h), 1e-4).unwrap();
        assert!((d - 6.0).abs() < 1e-7);
    }

    #[test]
    fn non_finite_is_unverifiable() {
        assert!(central_difference(|h| if h > 0.0 { f64::NAN } else { 0.0 }, 1e-3).is_none());
    }

    #[test]
    fn richardson_second_order() {
        let f = |x: f64| x.sin() * x.exp();
        let x0: f64 = 0.7;
        let exact = x0.cos() * x0.exp() + x0.sin() * x0.exp();
        let e1 = (central_difference(|h| f(x0 + h), 1e-2).unwrap() - exact).abs();
        let e2 = (central_difference(|h| f(x0 + h), 5e-3).unwrap() - exact).abs();
        let ratio = e1 / e2;
        assert!((ratio - 4.0).abs() < 0.1, "ratio {ratio}");
    }
}
