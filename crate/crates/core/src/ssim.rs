//! Structural similarity with an 11x11 Gaussian window (σ = 1.5) and the
//! usual `C1 = 0.01²`, `C2 = 0.03²` constants for a unit dynamic range.
//! Window sums use zero padding at the borders ("same" convolution).

use alloc::vec;
use alloc::vec::Vec;

use crate::error::Result;
use crate::image::Image;
use crate::math;

const WINDOW: usize = 11;
const SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

fn kernel() -> [f64; WINDOW] {
    let mut k = [0.0; WINDOW];
    let half = (WINDOW / 2) as f64;
    for (i, v) in k.iter_mut().enumerate() {
        let x = i as f64 - half;
        *v = math::exp(-x * x / (2.0 * SIGMA * SIGMA));
    }
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Separable zero-padded Gaussian filter. Self-adjoint.
fn blur(src: &[f64], width: usize, height: usize, k: &[f64; WINDOW]) -> Vec<f64> {
    let half = (WINDOW / 2) as isize;
    let mut tmp = vec![0.0; src.len()];
    for y in 0..height {
        for x in 0..width {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                let xx = x as isize + i as isize - half;
                if xx >= 0 && (xx as usize) < width {
                    acc += kv * src[y * width + xx as usize];
                }
            }
            tmp[y * width + x] = acc;
        }
    }
    let mut out = vec![0.0; src.len()];
    for y in 0..height {
        for x in 0..width {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                let yy = y as isize + i as isize - half;
                if yy >= 0 && (yy as usize) < height {
                    acc += kv * tmp[yy as usize * width + x];
                }
            }
            out[y * width + x] = acc;
        }
    }
    out
}

struct Moments {
    mu_x: Vec<f64>,
    mu_y: Vec<f64>,
    e_xx: Vec<f64>,
    e_yy: Vec<f64>,
    e_xy: Vec<f64>,
}

fn moments(x: &[f64], y: &[f64], w: usize, h: usize, k: &[f64; WINDOW]) -> Moments {
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();
    Moments {
        mu_x: blur(x, w, h, k),
        mu_y: blur(y, w, h, k),
        e_xx: blur(&xx, w, h, k),
        e_yy: blur(&yy, w, h, k),
        e_xy: blur(&xy, w, h, k),
    }
}

#[inline]
fn ssim_terms(m: &Moments, p: usize) -> (f64, f64, f64, f64) {
    let (mx, my) = (m.mu_x[p], m.mu_y[p]);
    let a1 = 2.0 * mx * my + C1;
    let a2 = 2.0 * (m.e_xy[p] - mx * my) + C2;
    let b1 = mx * mx + my * my + C1;
    let b2 = (m.e_xx[p] - mx * mx) + (m.e_yy[p] - my * my) + C2;
    (a1, a2, b1, b2)
}

/// Mean SSIM over all pixels and channels.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    a.ensure_same_shape(b)?;
    let k = kernel();
    let (w, h) = (a.width(), a.height());
    let mut total = 0.0;
    for c in 0..a.channels() {
        let x = a.channel(c);
        let y = b.channel(c);
        let m = moments(x.data(), y.data(), w, h, &k);
        for p in 0..w * h {
            let (a1, a2, b1, b2) = ssim_terms(&m, p);
            total += (a1 * a2) / (b1 * b2);
        }
    }
    Ok(total / (w * h * a.channels()) as f64)
}

/// Mean SSIM and its gradient with respect to `a`.
pub fn ssim_with_grad(a: &Image, b: &Image) -> Result<(f64, Image)> {
    a.ensure_same_shape(b)?;
    let k = kernel();
    let (w, h, ch) = (a.width(), a.height(), a.channels());
    let n = (w * h * ch) as f64;
    let mut total = 0.0;
    let mut grad = Image::zeros(w, h, ch);
    for c in 0..ch {
        let x = a.channel(c);
        let y = b.channel(c);
        let m = moments(x.data(), y.data(), w, h, &k);
        let mut g_mu = vec![0.0; w * h];
        let mut g_exx = vec![0.0; w * h];
        let mut g_exy = vec![0.0; w * h];
        for p in 0..w * h {
            let (a1, a2, b1, b2) = ssim_terms(&m, p);
            let s = (a1 * a2) / (b1 * b2);
            total += s;
            let (mx, my) = (m.mu_x[p], m.mu_y[p]);
            g_mu[p] = s * (2.0 * my / a1 - 2.0 * my / a2 - 2.0 * mx / b1 + 2.0 * mx / b2) / n;
            g_exx[p] = -s / b2 / n;
            g_exy[p] = 2.0 * s / a2 / n;
        }
        let bm = blur(&g_mu, w, h, &k);
        let bxx = blur(&g_exx, w, h, &k);
        let bxy = blur(&g_exy, w, h, &k);
        for p in 0..w * h {
            let xv = x.data()[p];
            let yv = y.data()[p];
            grad.data_mut()[p * ch + c] = bm[p] + 2.0 * xv * bxx[p] + yv * bxy[p];
        }
    }
    Ok((total / n, grad))
}
