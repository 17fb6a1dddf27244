//! Losses and their image-space gradients: photometric L1 + SSIM, two-view
//! depth consistency through a forward depth warp, and the normal prior.

use alloc::vec;
use alloc::vec::Vec;

use crate::camera::{CameraIntrinsics, CameraPose};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::math::{self, sign0, Vec2, Vec3};
use crate::ssim::ssim_with_grad;

/// Weights of the joint objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    /// SSIM share inside the photometric loss.
    pub ssim: f64,
    pub photometric_view1: f64,
    pub photometric_view2: f64,
    pub geometric: f64,
    /// Normal-prior weight; only used when the scene carries priors.
    pub normal_prior: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            ssim: 0.6,
            photometric_view1: 0.05,
            photometric_view2: 0.05,
            geometric: 0.01,
            normal_prior: 0.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.ssim,
            self.photometric_view1,
            self.photometric_view2,
            self.geometric,
            self.normal_prior,
        ];
        if all.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::InvalidConfig("loss weights must be finite and >= 0"));
        }
        if self.ssim > 1.0 {
            return Err(Error::InvalidConfig("ssim weight must be in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct PhotometricLoss {
    pub value: f64,
    pub l1: f64,
    /// Mean SSIM; `None` when the SSIM weight is zero and it was skipped.
    pub ssim: Option<f64>,
    pub grad: Image,
}

/// `(1 - λ) · L1 + λ · |1 - SSIM|` with its gradient w.r.t. `rendered`.
pub fn photometric_loss(rendered: &Image, observed: &Image, ssim_weight: f64) -> Result<PhotometricLoss> {
    rendered.ensure_same_shape(observed)?;
    let n = rendered.data().len() as f64;
    let mut grad = Image::zeros(rendered.width(), rendered.height(), rendered.channels());
    let mut l1 = 0.0;
    for ((g, r), o) in grad.data_mut().iter_mut().zip(rendered.data()).zip(observed.data()) {
        let d = r - o;
        l1 += d.abs();
        *g = (1.0 - ssim_weight) * sign0(d) / n;
    }
    l1 /= n;
    let mut value = (1.0 - ssim_weight) * l1;
    let mut ssim = None;
    if ssim_weight > 0.0 {
        let (s, gs) = ssim_with_grad(rendered, observed)?;
        value += ssim_weight * (1.0 - s).abs();
        // d|1 - s|/ds = -sign(1 - s)
        grad.add_scaled(&gs, -ssim_weight * sign0(1.0 - s));
        ssim = Some(s);
    }
    Ok(PhotometricLoss { value, l1, ssim, grad })
}

/// Where a warped view-2 sample landed in view 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WarpSample {
    /// Source pixel index (row-major) in view 2.
    pub source: usize,
    /// Continuous view-1 pixel coordinates of the sample.
    pub position: Vec2,
    /// `∂z₁/∂d₂`.
    pub d_depth: f64,
    /// `∂position/∂d₂`.
    pub d_position: Vec2,
}

/// View-2 depth forward-warped into view 1 with z-buffering.
#[derive(Debug, Clone)]
pub struct DepthWarp {
    pub depth: Image,
    /// Pixels of view 1 that received at least one sample.
    pub mask: Vec<bool>,
    /// Winning sample per view-1 pixel.
    pub samples: Vec<Option<WarpSample>>,
}

impl DepthWarp {
    pub fn masked_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// Forward-warps `depth2` into view 1.
///
/// Each pixel of view 2 with positive depth is back-projected through `k`,
/// moved by `view2_to_view1`, projected with `k` and splatted to the pixel
/// containing it, keeping the nearest depth. Ties go to the lower source
/// index.
pub fn warp_depth(depth2: &Image, k: &CameraIntrinsics, view2_to_view1: &CameraPose) -> DepthWarp {
    let (w, h) = (depth2.width(), depth2.height());
    let mut depth = Image::zeros(w, h, 1);
    let mut mask = vec![false; w * h];
    let mut samples: Vec<Option<WarpSample>> = vec![None; w * h];
    let r = &view2_to_view1.rotation;
    for y in 0..h {
        for x in 0..w {
            let d2 = depth2.get(x, y, 0);
            if !(d2 > 0.0) {
                continue;
            }
            let ray = k.unproject(x as f64 + 0.5, y as f64 + 0.5, 1.0);
            let dir = r * ray;
            let p1 = dir * d2 + view2_to_view1.translation;
            if !(p1.z > k.near) {
                continue;
            }
            let u = k.fx * p1.x / p1.z + k.cx;
            let v = k.fy * p1.y / p1.z + k.cy;
            let (tx, ty) = (math::floor(u), math::floor(v));
            if tx < 0.0 || ty < 0.0 || tx >= w as f64 || ty >= h as f64 {
                continue;
            }
            let t = ty as usize * w + tx as usize;
            if mask[t] && depth.data()[t] <= p1.z {
                continue;
            }
            let inv_z2 = 1.0 / (p1.z * p1.z);
            let d_position = Vec2::new(
                k.fx * (dir.x * p1.z - p1.x * dir.z) * inv_z2,
                k.fy * (dir.y * p1.z - p1.y * dir.z) * inv_z2,
            );
            mask[t] = true;
            depth.data_mut()[t] = p1.z;
            samples[t] = Some(WarpSample {
                source: y * w + x,
                position: Vec2::new(u, v),
                d_depth: dir.z,
                d_position,
            });
        }
    }
    DepthWarp { depth, mask, samples }
}

#[derive(Debug, Clone)]
pub struct GeometricLoss {
    pub value: f64,
    pub d_depth1: Image,
    pub d_depth2: Image,
    /// Pixels entering the mean.
    pub pixels: usize,
    /// No co-visible pixels; value and gradients are zero.
    pub empty: bool,
}

/// Mean `|D_warp − D_1|` over co-visible pixels.
///
/// `D_1` is read bilinearly at the continuous position of each warped sample
/// (exactly the pixel value when the warp maps pixel centers to pixel
/// centers), so the gradient w.r.t. `D_2` includes both the depth transport
/// and the displacement of the sample. Pixels whose `D_1` lookup touches an
/// empty (zero) depth are not co-visible.
pub fn geometric_loss(depth1: &Image, warp: &DepthWarp) -> Result<GeometricLoss> {
    depth1.ensure_same_shape(&warp.depth)?;
    let (w, h) = (depth1.width(), depth1.height());
    let mut d1_grad = Image::zeros(w, h, 1);
    let mut d2_grad = Image::zeros(w, h, 1);

    let mut terms = Vec::new();
    for (t, sample) in warp.samples.iter().enumerate() {
        let Some(s) = sample else { continue };
        if !warp.mask[t] {
            continue;
        }
        let taps = depth1.bilinear_taps(s.position.x, s.position.y);
        if taps.iter().any(|&(x, y, wt)| wt > 0.0 && !(depth1.get(x, y, 0) > 0.0)) {
            continue;
        }
        terms.push((t, s, taps));
    }
    if terms.is_empty() {
        return Ok(GeometricLoss {
            value: 0.0,
            d_depth1: d1_grad,
            d_depth2: d2_grad,
            pixels: 0,
            empty: true,
        });
    }
    let n = terms.len() as f64;
    let mut value = 0.0;
    for (t, s, taps) in &terms {
        let (d1, grad_d1) = depth1.sample_bilinear(s.position.x, s.position.y, 0);
        let r = warp.depth.data()[*t] - d1;
        value += r.abs();
        let g = sign0(r) / n;
        for &(x, y, wt) in taps {
            let i = depth1.index(x, y, 0);
            d1_grad.data_mut()[i] -= g * wt;
        }
        let displacement = grad_d1[0] * s.d_position.x + grad_d1[1] * s.d_position.y;
        d2_grad.data_mut()[s.source] += g * (s.d_depth - displacement);
    }
    Ok(GeometricLoss {
        value: value / n,
        d_depth1: d1_grad,
        d_depth2: d2_grad,
        pixels: terms.len(),
        empty: false,
    })
}

#[derive(Debug, Clone)]
pub struct NormalPriorLoss {
    pub value: f64,
    /// Tangent-projected gradient per surfel.
    pub grads: Vec<Vec3>,
}

/// Mean over surfels of `|n − n̂|₁ + |1 − n·n̂|`.
pub fn normal_prior_loss(normals: &[Vec3], priors: &[Vec3]) -> Result<NormalPriorLoss> {
    if normals.len() != priors.len() {
        return Err(Error::DimensionMismatch(normals.len(), 1, 3, priors.len(), 1, 3));
    }
    if normals.is_empty() {
        return Ok(NormalPriorLoss { value: 0.0, grads: Vec::new() });
    }
    let n_inv = 1.0 / normals.len() as f64;
    let mut value = 0.0;
    let grads = normals
        .iter()
        .zip(priors)
        .map(|(n, p)| {
            let diff = n - p;
            let dot = n.dot(p);
            value += diff.abs().sum() + (1.0 - dot).abs();
            let g = (diff.map(sign0) - p * sign0(1.0 - dot)) * n_inv;
            g - n * n.dot(&g)
        })
        .collect();
    Ok(NormalPriorLoss {
        value: value * n_inv,
        grads,
    })
}

/// Values of every loss term at one iteration, plus the weighted total.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossReport {
    pub photometric_view1: f64,
    pub photometric_view2: f64,
    pub geometric: f64,
    pub normal_prior: Option<f64>,
    pub total: f64,
}

impl LossReport {
    pub fn new(pho1: f64, pho2: f64, geo: f64, normal: Option<f64>, weights: &LossWeights) -> Self {
        let total = weights.photometric_view1 * pho1
            + weights.photometric_view2 * pho2
            + weights.geometric * geo
            + normal.map_or(0.0, |v| weights.normal_prior * v);
        Self {
            photometric_view1: pho1,
            photometric_view2: pho2,
            geometric: geo,
            normal_prior: normal,
            total,
        }
    }
}
