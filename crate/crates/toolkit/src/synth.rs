//! Synthetic two-view problems with known geometry, intrinsics and pose.
//!
//! Geometry is defined analytically in the view-1 camera frame (camera at the
//! origin looking down `+z`). Truth surfels come from ray-casting a grid that
//! extends past the view-1 image by a margin, so view 2 sees surface beyond
//! the view-1 border. Observations are rendered with the core rasterizer.
//!
//! The initial surfels handed to bundle adjustment come from
//! [`init_surfels_from_depth`] applied to the ray-cast depth (plus optional
//! noise) and the truth render over the same extended canvas.

use std::path::PathBuf;

use noise::{Fbm, MultiFractal, NoiseFn, Perlin};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use surfelsplat_core::math::{Mat3, Vec2, Vec3};
use surfelsplat_core::{
    render, se3_exp, warp_depth, CameraIntrinsics, CameraPose, GaussianSurfel, Image, RasterConfig, SurfelScene,
    TangentUpdate,
};

use crate::error::{Error, Result};
use crate::init::{init_surfels_from_depth, InitOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// A single plane about 3 units away.
    Plane,
    /// A strip about 2.5 units away in front of a plane at about 4.
    TwoPlanes,
    /// Front cap of a sphere (radius 3, center depth 5.5) against a backdrop.
    SpherePatch,
    /// Inside corner of a box: side wall, floor and back wall.
    TexturedBoxCorner,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Texture {
    /// 3D checkerboard with cells of `cell` world units.
    Checker { cell: f64 },
    /// Fractal Perlin noise, `frequency` cycles per world unit.
    Perlin { frequency: f64, octaves: usize },
    /// An 8-bit image projected from view 1 over the extended canvas.
    Image { path: PathBuf },
}

impl Default for Texture {
    fn default() -> Self {
        Texture::Perlin { frequency: 1.5, octaves: 3 }
    }
}

/// Random perturbation of the starting camera. Directions and signs are
/// drawn from the spec seed; magnitudes are exact.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Perturbation {
    /// Relative focal error, applied with a random sign per axis.
    pub focal: f64,
    /// Principal point offset in pixels, random direction.
    pub principal: f64,
    /// Rotation error in degrees about a random axis.
    pub rotation_deg: f64,
    /// Translation error as a fraction of the scene scale (mean view-1 depth).
    pub translation: f64,
}

impl Default for Perturbation {
    fn default() -> Self {
        Self { focal: 0.1, principal: 0.0, rotation_deg: 3.0, translation: 0.01 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSceneSpec {
    pub preset: Preset,
    pub texture: Texture,
    pub width: u32,
    pub height: u32,
    /// `f_x = f_y = focal · width`.
    pub focal: f64,
    /// Principal point offset from the image center, pixels.
    pub principal_offset: [f64; 2],
    /// Truth surfel grid spacing in pixels.
    pub stride: usize,
    /// Pixel stride of the initial surfels.
    pub init_stride: usize,
    /// Extra canvas on each side as a fraction of the image size.
    pub margin: f64,
    /// View-2 camera center in view-1 coordinates.
    pub baseline: [f64; 3],
    /// View-2 orientation as an axis-angle vector (radians).
    pub rotation: [f64; 3],
    /// Relative standard deviation of multiplicative depth noise.
    pub depth_noise: f64,
    /// Standard deviation of the normal perturbation, radians.
    pub normal_noise: f64,
    pub opacity: f64,
    /// Surfel standard deviation in units of the projected grid spacing.
    pub scale_factor: f64,
    pub perturbation: Option<Perturbation>,
    pub seed: u64,
}

impl Default for SyntheticSceneSpec {
    fn default() -> Self {
        Self {
            preset: Preset::TwoPlanes,
            texture: Texture::default(),
            width: 48,
            height: 48,
            focal: 1.0,
            principal_offset: [0.0, 0.0],
            stride: 1,
            init_stride: 1,
            margin: 0.25,
            baseline: [0.1, 0.0, 0.0],
            rotation: [0.0, 0.0, 0.0],
            depth_noise: 0.0,
            normal_noise: 0.0,
            opacity: 0.9,
            scale_factor: 0.5,
            perturbation: None,
            seed: 0,
        }
    }
}

impl SyntheticSceneSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidSpec(m.to_string()));
        if self.width < 8 || self.height < 8 {
            return bad("resolution must be at least 8x8");
        }
        if !(self.focal > 0.0 && self.focal.is_finite()) {
            return bad("focal must be positive");
        }
        if self.stride == 0 || self.init_stride == 0 {
            return bad("strides must be positive");
        }
        if !(0.0..=2.0).contains(&self.margin) {
            return bad("margin must be in [0, 2]");
        }
        if !(self.depth_noise >= 0.0 && self.normal_noise >= 0.0) {
            return bad("noise levels must be >= 0");
        }
        if !(self.opacity > 0.0 && self.opacity <= 1.0) {
            return bad("opacity must be in (0, 1]");
        }
        if !(self.scale_factor > 0.0) {
            return bad("scale factor must be positive");
        }
        let finite = self.baseline.iter().chain(&self.rotation).chain(&self.principal_offset).all(|v| v.is_finite());
        if !finite {
            return bad("non-finite camera parameters");
        }
        if let Texture::Checker { cell } = self.texture {
            if !(cell > 0.0) {
                return bad("checker cell must be positive");
            }
        }
        Ok(())
    }

    pub fn intrinsics(&self) -> Result<CameraIntrinsics> {
        let f = self.focal * self.width as f64;
        Ok(CameraIntrinsics::new(
            f,
            f,
            0.5 * self.width as f64 + self.principal_offset[0],
            0.5 * self.height as f64 + self.principal_offset[1],
            self.width,
            self.height,
        )?)
    }

    /// World (view 1) → view 2.
    pub fn pose(&self) -> Result<CameraPose> {
        let r = se3_exp(&TangentUpdate::new(Vec3::from(self.rotation), Vec3::zeros())).rotation;
        Ok(CameraPose::new(r, -(r * Vec3::from(self.baseline)))?)
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticBundle {
    pub spec: SyntheticSceneSpec,
    pub scene: SurfelScene,
    pub intrinsics: CameraIntrinsics,
    pub pose: CameraPose,
    pub image1: Image,
    pub image2: Image,
    pub depth1: Image,
    pub depth2: Image,
    /// Depth-initialized surfels in the view-1 frame.
    pub init_scene: SurfelScene,
    pub init_intrinsics: CameraIntrinsics,
    pub init_pose: CameraPose,
    /// Fraction of view-1 pixels that receive warped view-2 depth.
    pub overlap: f64,
    /// `max - min` of positive view-1 depths.
    pub depth_range: f64,
    /// Mean positive view-1 depth.
    pub scene_scale: f64,
}

struct Hit {
    depth: f64,
    normal: Vec3,
}

/// Every preset is turned by a fixed rotation about a pivot, so no surface
/// is fronto-parallel or axis-aligned. Surfels at exactly equal depth would
/// make the global depth sort flip under any camera motion.
fn tilt(preset: Preset) -> (Mat3, Vec3) {
    let (omega, pivot) = match preset {
        Preset::Plane => (Vec3::new(-0.12, 0.3, 0.0), Vec3::new(0.0, 0.0, 3.0)),
        Preset::TwoPlanes => (Vec3::new(-0.12, 0.3, 0.0), Vec3::new(0.0, 0.0, 3.2)),
        Preset::SpherePatch => (Vec3::new(-0.12, 0.3, 0.0), Vec3::new(0.0, 0.0, 5.5)),
        Preset::TexturedBoxCorner => (Vec3::new(0.15, -0.2, 0.15), Vec3::zeros()),
    };
    (se3_exp(&TangentUpdate::new(omega, Vec3::zeros())).rotation, pivot)
}

/// Intersects the view-1 ray through `dir` (unit z component, so the ray
/// parameter is the depth) with the preset.
fn ray_cast(preset: Preset, dir: &Vec3) -> Option<Hit> {
    let (r, pivot) = tilt(preset);
    // untilted frame: origin `o`, direction `d`
    let o = pivot - r.transpose() * pivot;
    let d = r.transpose() * dir;
    let plane = |z: f64| {
        let t = (z - o.z) / d.z;
        (t > 0.0).then_some((t, Vec3::new(0.0, 0.0, -1.0)))
    };
    let hit = match preset {
        Preset::Plane => plane(3.0),
        Preset::TwoPlanes => plane(2.5)
            .filter(|(t, _)| (-0.45..=0.15).contains(&(o.x + d.x * t)))
            .or_else(|| plane(4.0)),
        Preset::SpherePatch => {
            let (c, rad) = (Vec3::new(0.0, 0.0, 5.5), 3.0);
            let oc = o - c;
            let (a, b) = (d.norm_squared(), d.dot(&oc));
            let disc = b * b - a * (oc.norm_squared() - rad * rad);
            if disc < 0.0 {
                plane(6.5)
            } else {
                let t = (-b - disc.sqrt()) / a;
                Some((t, (o + d * t - c) / rad))
            }
        }
        Preset::TexturedBoxCorner => [
            (0usize, 0.8, Vec3::new(-1.0, 0.0, 0.0)),
            (1, 0.6, Vec3::new(0.0, -1.0, 0.0)),
            (2, 4.0, Vec3::new(0.0, 0.0, -1.0)),
        ]
        .iter()
        .filter(|(axis, _, _)| d[*axis] > 0.0)
        .map(|&(axis, bound, n)| ((bound - o[axis]) / d[axis], n))
        .filter(|(t, _)| *t > 0.0)
        .min_by(|a, b| a.0.total_cmp(&b.0)),
    }?;
    Some(Hit { depth: hit.0, normal: r * hit.1 })
}

enum Shader {
    Checker(f64),
    Perlin([Fbm<Perlin>; 3], f64),
    Image(Image, CameraIntrinsics),
}

impl Shader {
    fn new(texture: &Texture, seed: u64, canvas: &CameraIntrinsics) -> Result<Self> {
        Ok(match texture {
            Texture::Checker { cell } => Shader::Checker(*cell),
            Texture::Perlin { frequency, octaves } => {
                let base = (seed as u32).wrapping_mul(3);
                let fbm = |s: u32| Fbm::<Perlin>::new(base.wrapping_add(s)).set_octaves((*octaves).max(1)).set_frequency(1.0);
                Shader::Perlin([fbm(0), fbm(1), fbm(2)], *frequency)
            }
            Texture::Image { path } => Shader::Image(crate::io::png::load_rgb(path)?, *canvas),
        })
    }

    fn shade(&self, p: &Vec3) -> Vec3 {
        match self {
            Shader::Checker(cell) => {
                let parity = (p / *cell).map(|v| v.floor()).sum().rem_euclid(2.0);
                if parity < 0.5 {
                    Vec3::new(0.85, 0.75, 0.3)
                } else {
                    Vec3::new(0.15, 0.3, 0.65)
                }
            }
            Shader::Perlin(fbm, freq) => {
                let q = [p.x * freq, p.y * freq, p.z * freq];
                Vec3::from_fn(|c, _| (0.5 + 0.45 * fbm[c].get(q)).clamp(0.0, 1.0))
            }
            Shader::Image(img, k) => {
                let u = (k.fx * p.x / p.z + k.cx) / k.width as f64 * img.width() as f64;
                let v = (k.fy * p.y / p.z + k.cy) / k.height as f64 * img.height() as f64;
                Vec3::from_fn(|c, _| img.sample_bilinear(u, v, c).0)
            }
        }
    }
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn random_unit(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v = Vec3::new(gaussian(rng), gaussian(rng), gaussian(rng));
        if let Some(u) = v.try_normalize(1e-6) {
            return u;
        }
    }
}

/// Positive-depth statistics: `(max - min, mean)`.
fn depth_stats(depth: &Image) -> (f64, f64) {
    let valid: Vec<f64> = depth.data().iter().copied().filter(|&d| d > 0.0).collect();
    if valid.is_empty() {
        return (0.0, 0.0);
    }
    let max = valid.iter().copied().fold(f64::MIN, f64::max);
    let min = valid.iter().copied().fold(f64::MAX, f64::min);
    (max - min, valid.iter().sum::<f64>() / valid.len() as f64)
}

/// Builds the truth scene, renders both views and initializes surfels.
pub fn generate_synthetic(spec: &SyntheticSceneSpec) -> Result<SyntheticBundle> {
    spec.validate()?;
    let k = spec.intrinsics()?;
    let pose = spec.pose()?;
    let raster = RasterConfig::default();

    let mx = (spec.margin * spec.width as f64).ceil() as u32;
    let my = (spec.margin * spec.height as f64).ceil() as u32;
    let canvas = CameraIntrinsics::new(
        k.fx,
        k.fy,
        k.cx + mx as f64,
        k.cy + my as f64,
        spec.width + 2 * mx,
        spec.height + 2 * my,
    )?;
    let shader = Shader::new(&spec.texture, spec.seed, &canvas)?;

    let focal = (k.fx * k.fy).sqrt();
    let ray = |x: usize, y: usize| canvas.unproject(x as f64 + 0.5, y as f64 + 0.5, 1.0);
    let mut surfels = Vec::new();
    for y in (0..canvas.height as usize).step_by(spec.stride) {
        for x in (0..canvas.width as usize).step_by(spec.stride) {
            let dir = ray(x, y);
            let Some(hit) = ray_cast(spec.preset, &dir) else { continue };
            let center = dir * hit.depth;
            // grazing surfaces get wider surfels so the projected footprint still covers a grid cell
            let cos = hit.normal.dot(&dir.normalize()).abs().max(0.35);
            let s = spec.scale_factor * hit.depth * spec.stride as f64 / (focal * cos);
            surfels.push(GaussianSurfel {
                color: shader.shade(&center),
                center,
                scale: Vec2::new(s, s),
                normal: hit.normal,
                opacity: spec.opacity,
            });
        }
    }
    let scene = SurfelScene::new(surfels)?;

    let view1 = render(&scene, &k, &CameraPose::identity(), &raster)?;
    let view2 = render(&scene, &k, &pose, &raster)?;
    let (depth_range, scene_scale) = depth_stats(&view1.depth);
    let warp = warp_depth(&view2.depth, &k, &pose.inverse());
    let covisible = warp.mask.iter().zip(view1.depth.data()).filter(|(m, d)| **m && **d > 0.0).count();
    let overlap = covisible as f64 / k.pixel_count() as f64;
    if covisible == 0 {
        return Err(Error::NoOverlap { overlap });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut depth_map = Image::zeros(canvas.width as usize, canvas.height as usize, 1);
    for y in 0..canvas.height as usize {
        for x in 0..canvas.width as usize {
            if let Some(hit) = ray_cast(spec.preset, &ray(x, y)) {
                let noise = if spec.depth_noise > 0.0 { spec.depth_noise * gaussian(&mut rng) } else { 0.0 };
                depth_map.set(x, y, 0, hit.depth * (1.0 + noise));
            }
        }
    }
    let canvas_color = render(&scene, &canvas, &CameraPose::identity(), &raster)?.color;
    let opts = InitOptions { stride: spec.init_stride, opacity: spec.opacity, scale_factor: spec.scale_factor };
    let mut init_scene = init_surfels_from_depth(&canvas_color, &depth_map, &canvas, &opts)?;
    if spec.normal_noise > 0.0 {
        for s in init_scene.surfels_mut() {
            let jitter = Vec3::new(gaussian(&mut rng), gaussian(&mut rng), gaussian(&mut rng)) * spec.normal_noise;
            let tangential = jitter - s.normal * s.normal.dot(&jitter);
            let n = (s.normal + tangential).normalize();
            s.normal = if n.dot(&s.center) > 0.0 { -n } else { n };
        }
    }

    let (init_intrinsics, init_pose) = match spec.perturbation {
        None => (k, pose),
        Some(p) => {
            let mut sign = || if rng.random::<bool>() { 1.0 } else { -1.0 };
            let (sx, sy) = (sign(), sign());
            let angle = rng.random_range(0.0..std::f64::consts::TAU);
            let ki = CameraIntrinsics::new(
                k.fx * (1.0 + sx * p.focal),
                k.fy * (1.0 + sy * p.focal),
                k.cx + p.principal * angle.cos(),
                k.cy + p.principal * angle.sin(),
                k.width,
                k.height,
            )?;
            let axis = random_unit(&mut rng);
            let dr: Mat3 = se3_exp(&TangentUpdate::new(axis * p.rotation_deg.to_radians(), Vec3::zeros())).rotation;
            let dt = random_unit(&mut rng) * (p.translation * scene_scale);
            (ki, CameraPose::new(dr * pose.rotation, pose.translation + dt)?)
        }
    };

    Ok(SyntheticBundle {
        spec: spec.clone(),
        scene,
        intrinsics: k,
        pose,
        image1: view1.color,
        image2: view2.color,
        depth1: view1.depth,
        depth2: view2.depth,
        init_scene,
        init_intrinsics,
        init_pose,
        overlap,
        depth_range,
        scene_scale,
    })
}
