//! Deterministic surfel initialization from an image and a depth map.
//!
//! Stands in for a learned per-pixel Gaussian decoder: every sampled pixel
//! becomes one surfel at its back-projected depth, colored with the pixel,
//! oriented by the local depth-map tangent plane, and sized to cover the
//! sampling footprint.

use surfelsplat_core::math::{Vec2, Vec3};
use surfelsplat_core::{CameraIntrinsics, GaussianSurfel, Image, SurfelScene};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitOptions {
    /// Sample every `stride`-th pixel in both directions.
    pub stride: usize,
    pub opacity: f64,
    /// Surfel standard deviation in units of the projected sample spacing.
    pub scale_factor: f64,
}

impl Default for InitOptions {
    fn default() -> Self {
        Self { stride: 1, opacity: 0.9, scale_factor: 0.5 }
    }
}

fn valid(d: f64) -> bool {
    d.is_finite() && d > 0.0
}

/// Derivative of the back-projected surface along one pixel axis. Takes the
/// central difference when both neighbors are valid and continuous with the
/// center; at a depth edge it falls back to the side with the smaller jump
/// so the normal describes the surface the pixel actually sits on.
fn tangent(points: &dyn Fn(isize, isize) -> Option<Vec3>, x: isize, y: isize, dx: isize, dy: isize) -> Option<Vec3> {
    let c = points(x, y)?;
    let fwd = points(x + dx, y + dy);
    let bwd = points(x - dx, y - dy);
    match (fwd, bwd) {
        (Some(f), Some(b)) => {
            let (jf, jb) = ((f.z - c.z).abs(), (c.z - b.z).abs());
            if jf.max(jb) <= 2.0 * jf.min(jb) + 1e-3 * c.z {
                Some((f - b) * 0.5)
            } else if jf < jb {
                Some(f - c)
            } else {
                Some(c - b)
            }
        }
        (Some(f), None) => Some(f - c),
        (None, Some(b)) => Some(c - b),
        (None, None) => None,
    }
}

/// One surfel per valid sampled pixel, in the camera frame of `k`.
///
/// Normals face the camera (`n · μ < 0`). Where the depth map gives no
/// tangent plane the normal points back along the viewing ray.
pub fn init_surfels_from_depth(image: &Image, depth: &Image, k: &CameraIntrinsics, opts: &InitOptions) -> Result<SurfelScene> {
    let (w, h) = (depth.width(), depth.height());
    if depth.channels() != 1 {
        return Err(Error::format("depth", format!("expected 1 channel, got {}", depth.channels())));
    }
    if image.width() != w || image.height() != h {
        return Err(Error::format("image", "image and depth sizes differ"));
    }
    if (k.width as usize, k.height as usize) != (w, h) {
        return Err(Error::format("camera", "intrinsics do not match the depth map size"));
    }
    if opts.stride == 0 || !(opts.scale_factor > 0.0) {
        return Err(Error::InvalidSpec("stride and scale factor must be positive".into()));
    }
    let points = |x: isize, y: isize| -> Option<Vec3> {
        if x < 0 || y < 0 || x >= w as isize || y >= h as isize {
            return None;
        }
        let d = depth.get(x as usize, y as usize, 0);
        valid(d).then(|| k.unproject(x as f64 + 0.5, y as f64 + 0.5, d))
    };
    let focal = (k.fx * k.fy).sqrt();
    let pixel_color = |x: usize, y: usize| match image.channels() {
        1 => Vec3::repeat(image.get(x, y, 0)),
        _ => Vec3::new(image.get(x, y, 0), image.get(x, y, 1), image.get(x, y, 2)),
    };
    let mut surfels = Vec::new();
    for y in (0..h).step_by(opts.stride) {
        for x in (0..w).step_by(opts.stride) {
            let Some(mu) = points(x as isize, y as isize) else { continue };
            let (xi, yi) = (x as isize, y as isize);
            let normal = match (tangent(&points, xi, yi, 1, 0), tangent(&points, xi, yi, 0, 1)) {
                (Some(tx), Some(ty)) => tx.cross(&ty).try_normalize(1e-12),
                _ => None,
            };
            let mut n = normal.unwrap_or_else(|| -mu.normalize());
            if n.dot(&mu) > 0.0 {
                n = -n;
            }
            let s = opts.scale_factor * mu.z * opts.stride as f64 / focal;
            surfels.push(GaussianSurfel {
                color: pixel_color(x, y).map(|c| c.clamp(0.0, 1.0)),
                center: mu,
                scale: Vec2::new(s, s),
                normal: n,
                opacity: opts.opacity,
            });
        }
    }
    if surfels.is_empty() {
        return Err(Error::EmptyDepth);
    }
    Ok(SurfelScene::new(surfels)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fronto_parallel_plane() {
        let k = CameraIntrinsics::new(20.0, 20.0, 8.0, 8.0, 16, 16).unwrap();
        let depth = Image::filled(16, 16, 1, 3.0);
        let image = Image::filled(16, 16, 3, 0.5);
        let scene = init_surfels_from_depth(&image, &depth, &k, &InitOptions::default()).unwrap();
        assert_eq!(scene.len(), 256);
        for s in scene.surfels() {
            assert_eq!(s.center.z, 3.0);
            assert!((s.normal - Vec3::new(0.0, 0.0, -1.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn stride_count_and_invalid_pixels() {
        let k = CameraIntrinsics::new(20.0, 20.0, 7.5, 5.5, 15, 11).unwrap();
        let mut depth = Image::filled(15, 11, 1, 2.0);
        let image = Image::zeros(15, 11, 3);
        let opts = InitOptions { stride: 2, ..Default::default() };
        assert_eq!(init_surfels_from_depth(&image, &depth, &k, &opts).unwrap().len(), 8 * 6);
        depth.set(0, 0, 0, 0.0);
        depth.set(1, 0, 0, f64::NAN);
        assert_eq!(init_surfels_from_depth(&image, &depth, &k, &opts).unwrap().len(), 8 * 6 - 1);
        let empty = Image::zeros(15, 11, 1);
        assert!(matches!(init_surfels_from_depth(&image, &empty, &k, &opts), Err(Error::EmptyDepth)));
    }
}
