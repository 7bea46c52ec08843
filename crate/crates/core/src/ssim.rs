//! Structural similarity with an 11x11 Gaussian window (sigma 1.5) and its
//! gradient with respect to the first image.
//!
//! Window statistics are computed only at positions where the window fits
//! entirely inside the image; the score is the mean over those positions and
//! over the three channels. Images smaller than the window use the largest
//! odd window that fits.

use crate::{Error, Result, RgbImage};

pub const WINDOW: usize = 11;
pub const SIGMA: f64 = 1.5;
pub const C1: f64 = 0.01 * 0.01;
pub const C2: f64 = 0.03 * 0.03;

fn kernel(size: usize) -> Vec<f64> {
    let half = (size / 2) as f64;
    let raw: Vec<f64> = (0..size)
        .map(|i| {
            let d = i as f64 - half;
            (-d * d / (2.0 * SIGMA * SIGMA)).exp()
        })
        .collect();
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / sum).collect()
}

/// Separable 'valid' correlation: output is `(w-k+1) x (h-k+1)`.
fn filter_valid(src: &[f64], w: usize, h: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (ow, oh) = (w + 1 - n, h + 1 - n);
    let mut tmp = vec![0.0; ow * h];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..ow {
            tmp[y * ow + x] = k.iter().zip(&row[x..x + n]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|i| k[i] * tmp[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Adjoint of [`filter_valid`]: scatters a `(w-k+1) x (h-k+1)` map back to `w x h`.
fn filter_valid_adjoint(src: &[f64], w: usize, h: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (ow, oh) = (w + 1 - n, h + 1 - n);
    let mut tmp = vec![0.0; ow * h];
    for y in 0..oh {
        for x in 0..ow {
            let v = src[y * ow + x];
            for i in 0..n {
                tmp[(y + i) * ow + x] += k[i] * v;
            }
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..ow {
            let v = tmp[y * ow + x];
            for i in 0..n {
                out[y * w + x + i] += k[i] * v;
            }
        }
    }
    out
}

fn channel(img: &RgbImage, c: usize) -> Vec<f64> {
    img.data.iter().map(|p| p[c]).collect()
}

fn window_size(w: usize, h: usize) -> usize {
    let m = WINDOW.min(w).min(h);
    if m % 2 == 0 {
        m - 1
    } else {
        m
    }
}

/// Mean SSIM of one channel; with `grad`, also d(mean)/dx scaled by `scale`
/// and accumulated into `grad`.
fn channel_ssim(x: &[f64], y: &[f64], w: usize, h: usize, grad: Option<(&mut [f64], f64)>) -> f64 {
    let k = kernel(window_size(w, h));
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();
    let mx = filter_valid(x, w, h, &k);
    let my = filter_valid(y, w, h, &k);
    let exx = filter_valid(&xx, w, h, &k);
    let eyy = filter_valid(&yy, w, h, &k);
    let exy = filter_valid(&xy, w, h, &k);
    let count = mx.len() as f64;

    let mut total = 0.0;
    let mut d_mu = vec![0.0; mx.len()];
    let mut d_exx = vec![0.0; mx.len()];
    let mut d_exy = vec![0.0; mx.len()];
    for i in 0..mx.len() {
        let (ux, uy) = (mx[i], my[i]);
        let a1 = 2.0 * ux * uy + C1;
        let a2 = 2.0 * (exy[i] - ux * uy) + C2;
        let b1 = ux * ux + uy * uy + C1;
        let b2 = (exx[i] - ux * ux) + (eyy[i] - uy * uy) + C2;
        let s = a1 * a2 / (b1 * b2);
        total += s;
        d_mu[i] = (2.0 * uy * a2 - 2.0 * uy * a1) / (b1 * b2) - s * (2.0 * ux / b1 - 2.0 * ux / b2);
        d_exx[i] = -s / b2;
        d_exy[i] = 2.0 * a1 / (b1 * b2);
    }
    if let Some((g, scale)) = grad {
        let f = scale / count;
        for v in d_mu.iter_mut().chain(d_exx.iter_mut()).chain(d_exy.iter_mut()) {
            *v *= f;
        }
        let g_mu = filter_valid_adjoint(&d_mu, w, h, &k);
        let g_xx = filter_valid_adjoint(&d_exx, w, h, &k);
        let g_xy = filter_valid_adjoint(&d_exy, w, h, &k);
        for q in 0..g.len() {
            g[q] += g_mu[q] + 2.0 * x[q] * g_xx[q] + y[q] * g_xy[q];
        }
    }
    total / count
}

fn check(a: &RgbImage, b: &RgbImage) -> Result<()> {
    a.check_shape(b, "ssim inputs")?;
    if a.is_empty() {
        return Err(Error::ShapeMismatch("ssim of an empty image".into()));
    }
    Ok(())
}

pub fn ssim(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    check(a, b)?;
    let (w, h) = (a.width, a.height);
    Ok((0..3)
        .map(|c| channel_ssim(&channel(a, c), &channel(b, c), w, h, None))
        .sum::<f64>()
        / 3.0)
}

/// SSIM and its gradient with respect to `a`.
pub fn ssim_with_grad(a: &RgbImage, b: &RgbImage) -> Result<(f64, RgbImage)> {
    check(a, b)?;
    let (w, h) = (a.width, a.height);
    let mut grad = a.map(|_| crate::Vec3::zeros());
    let mut total = 0.0;
    for c in 0..3 {
        let mut g = vec![0.0; w * h];
        total += channel_ssim(&channel(a, c), &channel(b, c), w, h, Some((&mut g, 1.0 / 3.0)));
        for (dst, v) in grad.data.iter_mut().zip(g) {
            dst[c] = v;
        }
    }
    Ok((total / 3.0, grad))
}
