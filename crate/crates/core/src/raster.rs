//! Forward splatting: project, sort by depth, alpha-composite per tile.
//!
//! Every surfel gets one global depth rank (ties broken by index), and each
//! tile keeps the depth-ordered list of surfels whose k-sigma bounding box
//! touches it. Pixels then composite front to back:
//!
//! ```text
//! C_p = Σ c_i α_i T_i,   D_p = Σ d_i α_i T_i,   T_i = Π_{j<i} (1 - α_j)
//! ```
//!
//! The bounding boxes are conservative and the per-pixel support test is the
//! exact Mahalanobis radius, so the output does not depend on the tile size.

use alloc::vec;
use alloc::vec::Vec;

use crate::camera::{affine_jacobian, pinhole, CameraIntrinsics, CameraPose};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::math::{self, Mat2, Mat2x3, Mat3, Vec2, Vec3};
use crate::surfel::{covariance_from_frame, SurfelFrame, SurfelScene};

/// Upper clamp on a single contribution.
pub const MAX_ALPHA: f64 = 0.99;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RasterConfig {
    pub tile_size: usize,
    /// Contributions with `α < alpha_cutoff` are skipped.
    pub alpha_cutoff: f64,
    /// A pixel stops blending once its transmittance falls below this.
    pub transmittance_floor: f64,
    /// Screen-space dilation added to both diagonal entries of `Σ_I` (px²).
    pub cov_dilation: f64,
    /// Surfels are rasterized out to this many standard deviations.
    pub support_sigma: f64,
}

impl Default for RasterConfig {
    fn default() -> Self {
        Self {
            tile_size: 16,
            alpha_cutoff: 1.0 / 255.0,
            transmittance_floor: 1e-4,
            cov_dilation: 0.3,
            support_sigma: 3.0,
        }
    }
}

impl RasterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tile_size == 0 {
            return Err(Error::InvalidConfig("tile size must be positive"));
        }
        if !(self.alpha_cutoff > 0.0 && self.alpha_cutoff < 1.0) {
            return Err(Error::InvalidConfig("alpha cutoff must be in (0, 1)"));
        }
        if !(self.transmittance_floor > 0.0 && self.transmittance_floor < 1.0) {
            return Err(Error::InvalidConfig("transmittance floor must be in (0, 1)"));
        }
        if !(self.cov_dilation >= 0.0 && self.cov_dilation.is_finite()) {
            return Err(Error::InvalidConfig("covariance dilation must be >= 0"));
        }
        if !(self.support_sigma > 0.0 && self.support_sigma.is_finite()) {
            return Err(Error::InvalidConfig("support radius must be > 0"));
        }
        Ok(())
    }
}

/// `α = o · exp(-½ dᵀ (Σ_I + δI)⁻¹ d)` clamped to `[0, 0.99]`, with
/// `d = pixel - mean`. `None` if the dilated covariance is not positive
/// definite or not finite.
pub fn splat_alpha(cov: &Mat2, mean: &Vec2, opacity: f64, pixel: &Vec2, dilation: f64) -> Option<f64> {
    let conic = Conic::from_covariance(cov, dilation)?;
    let q = conic.quadratic(&(pixel - mean));
    Some((opacity * math::exp(-0.5 * q)).clamp(0.0, MAX_ALPHA))
}

/// Inverse of the dilated 2D covariance, `[[a, b], [b, c]]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Conic {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl Conic {
    pub(crate) fn from_covariance(cov: &Mat2, dilation: f64) -> Option<Self> {
        let s00 = cov[(0, 0)] + dilation;
        let s11 = cov[(1, 1)] + dilation;
        let s01 = 0.5 * (cov[(0, 1)] + cov[(1, 0)]);
        let det = s00 * s11 - s01 * s01;
        if !(det > 0.0 && det.is_finite() && s00 > 0.0) {
            return None;
        }
        let inv = 1.0 / det;
        Some(Self {
            a: s11 * inv,
            b: -s01 * inv,
            c: s00 * inv,
        })
    }

    #[inline]
    pub(crate) fn quadratic(&self, d: &Vec2) -> f64 {
        self.a * d.x * d.x + 2.0 * self.b * d.x * d.y + self.c * d.y * d.y
    }

    pub(crate) fn matrix(&self) -> Mat2 {
        Mat2::new(self.a, self.b, self.b, self.c)
    }
}

/// Per-surfel data computed once per view and reused by the backward pass.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Splat {
    pub mean: Vec2,
    pub conic: Conic,
    pub opacity: f64,
    pub color: Vec3,
    pub depth: f64,
    pub camera_center: Vec3,
    pub jacobian: Mat2x3,
    /// Camera-space covariance `W Σ Wᵀ`.
    pub camera_cov: Mat3,
    pub world_cov: Mat3,
    pub frame: SurfelFrame,
    /// Half-extent of the k-sigma bounding box, pixels.
    pub radius: f64,
}

/// One blended surfel at one pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Contributor {
    pub surfel: u32,
    /// Position of the surfel in its tile's depth-ordered list.
    pub(crate) slot: u32,
    pub alpha: f64,
    /// Transmittance in front of this contributor.
    pub transmittance: f64,
    /// `α` hit [`MAX_ALPHA`]; no gradient flows through the Gaussian.
    pub clamped: bool,
}

#[derive(Debug, Clone)]
pub(crate) struct TileBins {
    pub tiles_x: usize,
    pub tile_size: usize,
    /// Depth-ordered surfel indices per tile, row-major over tiles.
    pub lists: Vec<Vec<u32>>,
}

impl TileBins {
    pub(crate) fn tile_pixels(&self, tile: usize, width: usize, height: usize) -> (core::ops::Range<usize>, core::ops::Range<usize>) {
        let tx = tile % self.tiles_x;
        let ty = tile / self.tiles_x;
        let x0 = tx * self.tile_size;
        let y0 = ty * self.tile_size;
        (x0..(x0 + self.tile_size).min(width), y0..(y0 + self.tile_size).min(height))
    }
}

/// Rendered view plus everything the backward pass needs.
#[derive(Debug, Clone)]
pub struct RenderOutput {
    pub color: Image,
    pub depth: Image,
    pub alpha: Image,
    /// Per-pixel `(start, len)` into [`RenderOutput::contributors`].
    pub pixel_ranges: Vec<(u32, u32)>,
    pub contributors: Vec<Contributor>,
    /// Number of surfels that survived culling.
    pub visible_surfels: usize,
    /// Surfels dropped because their projected covariance was degenerate or
    /// non-finite.
    pub skipped_degenerate: usize,
    /// Set when no surfel survived culling; the output is pure background.
    pub no_visible_surfels: bool,
    pub(crate) splats: Vec<Option<Splat>>,
    pub(crate) bins: TileBins,
    pub(crate) config: RasterConfig,
    pub(crate) intrinsics: CameraIntrinsics,
    pub(crate) pose: CameraPose,
    pub(crate) scene_generation: u64,
    pub(crate) scene_fingerprint: u64,
}

impl RenderOutput {
    pub fn width(&self) -> usize {
        self.color.width()
    }

    pub fn height(&self) -> usize {
        self.color.height()
    }

    pub fn pixel_contributors(&self, x: usize, y: usize) -> &[Contributor] {
        let (start, len) = self.pixel_ranges[y * self.width() + x];
        &self.contributors[start as usize..(start + len) as usize]
    }

    pub fn config(&self) -> &RasterConfig {
        &self.config
    }
}

/// Cheap content hash used to pair a render with its backward call.
pub(crate) fn scene_fingerprint(scene: &SurfelScene) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut mix = |v: f64| {
        h ^= v.to_bits();
        h = h.wrapping_mul(0x0100_0000_01b3);
    };
    for s in scene.surfels() {
        s.color.iter().for_each(|&v| mix(v));
        s.center.iter().for_each(|&v| mix(v));
        s.scale.iter().for_each(|&v| mix(v));
        s.normal.iter().for_each(|&v| mix(v));
        mix(s.opacity);
    }
    h ^ scene.len() as u64
}

#[cfg(feature = "parallel")]
pub(crate) fn par_map<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn par_map<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..n).map(f).collect()
}

fn project_splats(
    scene: &SurfelScene,
    k: &CameraIntrinsics,
    pose: &CameraPose,
    cfg: &RasterConfig,
) -> (Vec<Option<Splat>>, usize) {
    let width = k.width as f64;
    let height = k.height as f64;
    let surfels = scene.surfels();
    let projected = par_map(surfels.len(), |i| {
        let s = &surfels[i];
        let camera_center = pose.transform(&s.center);
        let depth = camera_center.z;
        if !(depth > k.near && depth < k.far) {
            return Ok(None);
        }
        let Ok(frame) = s.frame() else {
            return Err(());
        };
        let jacobian = affine_jacobian(&camera_center, k).ok_or(())?;
        let world_cov = covariance_from_frame(&frame, &s.scale);
        let camera_cov = pose.rotation * world_cov * pose.rotation.transpose();
        let cov2d = jacobian * camera_cov * jacobian.transpose();
        let cov2d = 0.5 * (cov2d + cov2d.transpose());
        if !cov2d.iter().all(|v| v.is_finite()) {
            return Err(());
        }
        let conic = Conic::from_covariance(&cov2d, cfg.cov_dilation).ok_or(())?;
        let dilated = cov2d + Mat2::identity() * cfg.cov_dilation;
        let radius = cfg.support_sigma * math::sqrt(math::max_eigenvalue_sym2(&dilated));
        let mean = pinhole(&camera_center, k);
        if mean.x + radius < 0.0 || mean.y + radius < 0.0 || mean.x - radius > width || mean.y - radius > height {
            return Ok(None);
        }
        Ok(Some(Splat {
            mean,
            conic,
            opacity: s.opacity,
            color: s.color,
            depth,
            camera_center,
            jacobian,
            camera_cov,
            world_cov,
            frame,
            radius,
        }))
    });
    let mut skipped = 0;
    let splats = projected
        .into_iter()
        .map(|r| {
            r.unwrap_or_else(|()| {
                skipped += 1;
                None
            })
        })
        .collect();
    (splats, skipped)
}

fn bin_splats(splats: &[Option<Splat>], width: usize, height: usize, tile_size: usize) -> TileBins {
    let tiles_x = width.div_ceil(tile_size);
    let tiles_y = height.div_ceil(tile_size);
    let mut order: Vec<u32> = (0..splats.len() as u32)
        .filter(|&i| splats[i as usize].is_some())
        .collect();
    order.sort_by(|&a, &b| {
        let da = splats[a as usize].as_ref().map_or(0.0, |s| s.depth);
        let db = splats[b as usize].as_ref().map_or(0.0, |s| s.depth);
        da.total_cmp(&db).then(a.cmp(&b))
    });
    let mut lists = vec![Vec::new(); tiles_x * tiles_y];
    let ts = tile_size as f64;
    for &i in &order {
        let s = splats[i as usize].as_ref().unwrap();
        let x0 = math::floor((s.mean.x - s.radius) / ts).max(0.0) as usize;
        let y0 = math::floor((s.mean.y - s.radius) / ts).max(0.0) as usize;
        let x1 = (math::floor((s.mean.x + s.radius) / ts).max(0.0) as usize).min(tiles_x - 1);
        let y1 = (math::floor((s.mean.y + s.radius) / ts).max(0.0) as usize).min(tiles_y - 1);
        for ty in y0..=y1 {
            for tx in x0..=x1 {
                lists[ty * tiles_x + tx].push(i);
            }
        }
    }
    TileBins {
        tiles_x,
        tile_size,
        lists,
    }
}

/// Evaluates one splat at a pixel center: `Some((α, clamped))` if it passes
/// the support and cutoff tests.
#[inline]
pub(crate) fn evaluate(s: &Splat, pixel: &Vec2, cfg: &RasterConfig) -> Option<(f64, bool)> {
    let q = s.conic.quadratic(&(pixel - s.mean));
    if !(q <= cfg.support_sigma * cfg.support_sigma) {
        return None;
    }
    let raw = s.opacity * math::exp(-0.5 * q);
    if raw < cfg.alpha_cutoff {
        return None;
    }
    if raw > MAX_ALPHA {
        Some((MAX_ALPHA, true))
    } else {
        Some((raw, false))
    }
}

struct PixelResult {
    color: Vec3,
    depth: f64,
    transmittance: f64,
    contributors: Vec<Contributor>,
}

fn render_tile(tile: usize, bins: &TileBins, splats: &[Option<Splat>], width: usize, height: usize, cfg: &RasterConfig) -> Vec<PixelResult> {
    let (xs, ys) = bins.tile_pixels(tile, width, height);
    let list = &bins.lists[tile];
    let mut out = Vec::with_capacity(xs.len() * ys.len());
    for y in ys {
        for x in xs.clone() {
            let pixel = Vec2::new(x as f64 + 0.5, y as f64 + 0.5);
            let mut t = 1.0;
            let mut color = Vec3::zeros();
            let mut depth = 0.0;
            let mut contributors = Vec::new();
            for (slot, &i) in list.iter().enumerate() {
                let s = splats[i as usize].as_ref().unwrap();
                let Some((alpha, clamped)) = evaluate(s, &pixel, cfg) else {
                    continue;
                };
                let w = alpha * t;
                color += s.color * w;
                depth += s.depth * w;
                contributors.push(Contributor {
                    surfel: i,
                    slot: slot as u32,
                    alpha,
                    transmittance: t,
                    clamped,
                });
                t *= 1.0 - alpha;
                if t < cfg.transmittance_floor {
                    break;
                }
            }
            out.push(PixelResult {
                color,
                depth,
                transmittance: t,
                contributors,
            });
        }
    }
    out
}

/// Renders color, depth and accumulated alpha of `scene` seen through
/// `(k, pose)`.
pub fn render(scene: &SurfelScene, k: &CameraIntrinsics, pose: &CameraPose, cfg: &RasterConfig) -> Result<RenderOutput> {
    k.validate()?;
    pose.validate()?;
    cfg.validate()?;
    let width = k.width as usize;
    let height = k.height as usize;

    let (splats, skipped_degenerate) = project_splats(scene, k, pose, cfg);
    let visible_surfels = splats.iter().filter(|s| s.is_some()).count();
    let bins = bin_splats(&splats, width, height, cfg.tile_size);

    let tiles = par_map(bins.lists.len(), |t| render_tile(t, &bins, &splats, width, height, cfg));

    let mut color = Image::zeros(width, height, 3);
    let mut depth = Image::zeros(width, height, 1);
    let mut alpha = Image::zeros(width, height, 1);
    let mut pixel_ranges = vec![(0u32, 0u32); width * height];
    let mut contributors = Vec::new();
    for (t, results) in tiles.into_iter().enumerate() {
        let (xs, ys) = bins.tile_pixels(t, width, height);
        let mut it = results.into_iter();
        for y in ys {
            for x in xs.clone() {
                let px = it.next().expect("tile pixel count");
                for c in 0..3 {
                    color.set(x, y, c, px.color[c]);
                }
                depth.set(x, y, 0, px.depth);
                alpha.set(x, y, 0, 1.0 - px.transmittance);
                pixel_ranges[y * width + x] = (contributors.len() as u32, px.contributors.len() as u32);
                contributors.extend(px.contributors);
            }
        }
    }

    Ok(RenderOutput {
        color,
        depth,
        alpha,
        pixel_ranges,
        contributors,
        visible_surfels,
        skipped_degenerate,
        no_visible_surfels: visible_surfels == 0,
        splats,
        bins,
        config: *cfg,
        intrinsics: *k,
        pose: *pose,
        scene_generation: scene.generation(),
        scene_fingerprint: scene_fingerprint(scene),
    })
}
