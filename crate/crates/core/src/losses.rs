//! Training losses and their gradients with respect to the rendered maps.
//!
//! Sums over pixels are taken as means over the pixels each term counts, so
//! the weights do not depend on image resolution.

use serde::{Deserialize, Serialize};

use crate::patchmatch::{Label, ReliabilityMask};
use crate::{ssim, Camera, DepthMap, Map, NormalMap, Result, RgbImage, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_dssim: f64,
    pub w_nc: f64,
    pub w_np: f64,
    pub w_d: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_dssim: 0.2,
            w_nc: 0.5,
            w_np: 1.0,
            w_d: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct LossBreakdown {
    pub l_c: f64,
    pub l_d: f64,
    pub l_np: f64,
    pub l_nc: f64,
    pub total: f64,
    pub n_c: usize,
    pub n_d: usize,
    pub n_np: usize,
    pub n_nc: usize,
}

/// A masked mean together with the number of pixels it averaged.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Term {
    pub value: f64,
    pub count: usize,
}

pub fn total_loss(l_c: f64, l_nc: f64, l_np: f64, l_d: f64, weights: &LossWeights) -> LossBreakdown {
    LossBreakdown {
        l_c,
        l_d,
        l_np,
        l_nc,
        total: l_c + weights.w_nc * l_nc + weights.w_np * l_np + weights.w_d * l_d,
        ..Default::default()
    }
}

/// `(1 - lambda) * L1 + lambda * (1 - SSIM) / 2`.
pub fn color_loss(rendered: &RgbImage, target: &RgbImage, lambda: f64) -> Result<f64> {
    color_loss_term(rendered, target, lambda, None).map(|t| t.value)
}

/// Color loss, accumulating its gradient with respect to `rendered` into `grad`.
pub fn color_loss_term(
    rendered: &RgbImage,
    target: &RgbImage,
    lambda: f64,
    grad: Option<&mut RgbImage>,
) -> Result<Term> {
    rendered.check_shape(target, "color loss")?;
    let n = (rendered.len() * 3) as f64;
    let l1 = rendered
        .data
        .iter()
        .zip(&target.data)
        .map(|(a, b)| (a - b).abs().sum())
        .sum::<f64>()
        / n;
    let mut value = (1.0 - lambda) * l1;
    match grad {
        Some(g) => {
            rendered.check_shape(g, "color gradient")?;
            let f = (1.0 - lambda) / n;
            for ((gp, a), b) in g.data.iter_mut().zip(&rendered.data).zip(&target.data) {
                *gp += (a - b).map(|d| sign(d) * f);
            }
            if lambda != 0.0 {
                let (s, gs) = ssim::ssim_with_grad(rendered, target)?;
                value += lambda * (1.0 - s) / 2.0;
                for (gp, d) in g.data.iter_mut().zip(&gs.data) {
                    *gp -= d * (lambda / 2.0);
                }
            }
        }
        None => {
            if lambda != 0.0 {
                value += lambda * (1.0 - ssim::ssim(rendered, target)?) / 2.0;
            }
        }
    }
    Ok(Term {
        value,
        count: rendered.len(),
    })
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Mean `|d_p - d_i|` over Reliable pixels whose rendered alpha exceeds
/// `alpha_min`; 0 when no pixel qualifies.
pub fn depth_loss(
    rendered_depth: &DepthMap,
    alpha: &Map<f64>,
    pm_depth: &DepthMap,
    mask: &ReliabilityMask,
    alpha_min: f64,
) -> Result<f64> {
    depth_loss_term(rendered_depth, alpha, pm_depth, mask, alpha_min, None).map(|t| t.value)
}

pub fn depth_loss_term(
    rendered_depth: &DepthMap,
    alpha: &Map<f64>,
    pm_depth: &DepthMap,
    mask: &ReliabilityMask,
    alpha_min: f64,
    grad: Option<&mut DepthMap>,
) -> Result<Term> {
    rendered_depth.check_shape(pm_depth, "depth loss")?;
    rendered_depth.check_shape(alpha, "depth loss alpha")?;
    rendered_depth.check_shape(&mask.labels, "depth loss mask")?;
    let counted: Vec<usize> = (0..rendered_depth.len())
        .filter(|&i| mask.labels.data[i] == Label::Reliable && alpha.data[i] > alpha_min && pm_depth.data[i] > 0.0)
        .collect();
    if counted.is_empty() {
        return Ok(Term::default());
    }
    let n = counted.len() as f64;
    let value = counted
        .iter()
        .map(|&i| (rendered_depth.data[i] - pm_depth.data[i]).abs())
        .sum::<f64>()
        / n;
    if let Some(g) = grad {
        rendered_depth.check_shape(g, "depth gradient")?;
        for &i in &counted {
            g.data[i] += sign(rendered_depth.data[i] - pm_depth.data[i]) / n;
        }
    }
    Ok(Term {
        value,
        count: counted.len(),
    })
}

/// Mean `1 - n_p . n_i` over Unreliable pixels with a valid prior and
/// rendered alpha above `alpha_min`.
pub fn normal_prior_loss(
    rendered_normal: &NormalMap,
    alpha: &Map<f64>,
    prior_normal: &NormalMap,
    mask: &ReliabilityMask,
    alpha_min: f64,
) -> Result<f64> {
    normal_prior_loss_term(rendered_normal, alpha, prior_normal, mask, alpha_min, None).map(|t| t.value)
}

pub fn normal_prior_loss_term(
    rendered_normal: &NormalMap,
    alpha: &Map<f64>,
    prior_normal: &NormalMap,
    mask: &ReliabilityMask,
    alpha_min: f64,
    grad: Option<&mut NormalMap>,
) -> Result<Term> {
    rendered_normal.check_shape(prior_normal, "normal prior loss")?;
    rendered_normal.check_shape(alpha, "normal prior alpha")?;
    rendered_normal.check_shape(&mask.labels, "normal prior mask")?;
    let counted: Vec<usize> = (0..rendered_normal.len())
        .filter(|&i| {
            mask.labels.data[i] == Label::Unreliable
                && alpha.data[i] > alpha_min
                && prior_normal.data[i].norm() > 0.5
                && rendered_normal.data[i] != Vec3::zeros()
        })
        .collect();
    if counted.is_empty() {
        return Ok(Term::default());
    }
    let n = counted.len() as f64;
    let value = counted
        .iter()
        .map(|&i| 1.0 - prior_normal.data[i].dot(&rendered_normal.data[i]))
        .sum::<f64>()
        / n;
    if let Some(g) = grad {
        rendered_normal.check_shape(g, "normal gradient")?;
        for &i in &counted {
            g.data[i] -= prior_normal.data[i] / n;
        }
    }
    Ok(Term {
        value,
        count: counted.len(),
    })
}

/// Camera-frame point of pixel `(x, y)` at `depth`.
fn lift(camera: &Camera, x: usize, y: usize, depth: f64) -> Vec3 {
    camera.pixel_ray_xy(x as f64, y as f64) * depth
}

/// Per-pixel normals from the cross product of the +x and +y tangents of
/// the back-projected depth map, oriented toward the camera. Pixels in the
/// last row or column, or with an empty neighbor, get `(0, 0, 0)`.
pub fn normal_from_depth(depth: &DepthMap, camera: &Camera) -> NormalMap {
    let (w, h) = (depth.width, depth.height);
    Map::from_fn(w, h, |x, y| {
        depth_normal_parts(depth, camera, x, y)
            .map(|p| p.normal)
            .unwrap_or_else(Vec3::zeros)
    })
}

struct NormalParts {
    normal: Vec3,
    cross: Vec3,
    tx: Vec3,
    ty: Vec3,
    sign: f64,
}

fn depth_normal_parts(depth: &DepthMap, camera: &Camera, x: usize, y: usize) -> Option<NormalParts> {
    if x + 1 >= depth.width || y + 1 >= depth.height {
        return None;
    }
    let (d0, dx, dy) = (*depth.get(x, y), *depth.get(x + 1, y), *depth.get(x, y + 1));
    if d0 <= 0.0 || dx <= 0.0 || dy <= 0.0 {
        return None;
    }
    let p0 = lift(camera, x, y, d0);
    let tx = lift(camera, x + 1, y, dx) - p0;
    let ty = lift(camera, x, y + 1, dy) - p0;
    let cross = tx.cross(&ty);
    let len = cross.norm();
    if len < 1e-300 {
        return None;
    }
    let sign = if cross.dot(&p0) > 0.0 { -1.0 } else { 1.0 };
    Some(NormalParts {
        normal: cross * (sign / len),
        cross,
        tx,
        ty,
        sign,
    })
}

/// Mean `1 - n_d . n_i` over pixels where both the depth-derived and the
/// rendered normal are defined.
pub fn depth_normal_consistency_loss(
    rendered_depth: &DepthMap,
    rendered_normal: &NormalMap,
    camera: &Camera,
) -> Result<f64> {
    depth_normal_consistency_term(rendered_depth, rendered_normal, camera, None).map(|t| t.value)
}

/// Consistency loss; gradients flow into both the depth and the normal map.
pub fn depth_normal_consistency_term(
    rendered_depth: &DepthMap,
    rendered_normal: &NormalMap,
    camera: &Camera,
    grad: Option<(&mut DepthMap, &mut NormalMap)>,
) -> Result<Term> {
    rendered_depth.check_shape(rendered_normal, "consistency loss")?;
    let (w, h) = (rendered_depth.width, rendered_depth.height);
    let mut parts = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let ni = *rendered_normal.get(x, y);
            if ni == Vec3::zeros() {
                continue;
            }
            if let Some(p) = depth_normal_parts(rendered_depth, camera, x, y) {
                parts.push((x, y, p));
            }
        }
    }
    if parts.is_empty() {
        return Ok(Term::default());
    }
    let n = parts.len() as f64;
    let value = parts
        .iter()
        .map(|(x, y, p)| 1.0 - p.normal.dot(rendered_normal.get(*x, *y)))
        .sum::<f64>()
        / n;
    if let Some((gd, gn)) = grad {
        rendered_depth.check_shape(gd, "depth gradient")?;
        rendered_depth.check_shape(gn, "normal gradient")?;
        for (x, y, p) in &parts {
            let (x, y) = (*x, *y);
            let ni = *rendered_normal.get(x, y);
            *gn.get_mut(x, y) -= p.normal / n;
            let g_nd = -ni / n;
            let len = p.cross.norm();
            let nh = p.cross / len;
            let g_c = (g_nd - nh * nh.dot(&g_nd)) * (p.sign / len);
            let g_tx = p.ty.cross(&g_c);
            let g_ty = g_c.cross(&p.tx);
            let r0 = camera.pixel_ray_xy(x as f64, y as f64);
            let rx = camera.pixel_ray_xy(x as f64 + 1.0, y as f64);
            let ry = camera.pixel_ray_xy(x as f64, y as f64 + 1.0);
            *gd.get_mut(x + 1, y) += rx.dot(&g_tx);
            *gd.get_mut(x, y + 1) += ry.dot(&g_ty);
            *gd.get_mut(x, y) -= r0.dot(&(g_tx + g_ty));
        }
    }
    Ok(Term {
        value,
        count: parts.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::patchmatch::ReliabilityMask;
    use nalgebra::Matrix3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn camera() -> Camera {
        Camera::new(60.0, 60.0, 15.5, 11.5, 32, 24, Matrix3::identity(), Vec3::zeros()).unwrap()
    }

    fn plane_depth(cam: &Camera, n: Vec3, offset: f64) -> DepthMap {
        // plane n.X + offset = 0 in camera frame
        Map::from_fn(cam.width, cam.height, |x, y| {
            let r = cam.pixel_ray_xy(x as f64, y as f64);
            -offset / n.dot(&r)
        })
    }

    #[test]
    fn color_loss_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = Map::from_fn(20, 20, |_, _| Vec3::new(rng.gen(), rng.gen(), rng.gen()));
        assert_eq!(color_loss(&a, &a, 0.2).unwrap(), 0.0);
        let base = Map::filled(20, 20, Vec3::repeat(0.5));
        let off = base.map(|p| p + Vec3::repeat(0.1));
        let s = (2.0 * 0.5 * 0.6 + ssim::C1) / (0.25 + 0.36 + ssim::C1);
        let expected = 0.8 * 0.1 + 0.2 * (1.0 - s) / 2.0;
        assert!((color_loss(&off, &base, 0.2).unwrap() - expected).abs() < 1e-12);
        assert!((color_loss(&off, &base, 0.0).unwrap() - 0.1).abs() < 1e-12);
        assert!(color_loss(&a, &Map::filled(19, 20, Vec3::zeros()), 0.2).is_err());
    }

    #[test]
    fn color_loss_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = Map::from_fn(14, 12, |_, _| Vec3::new(rng.gen(), rng.gen(), rng.gen()));
        let b = Map::from_fn(14, 12, |_, _| Vec3::new(rng.gen(), rng.gen(), rng.gen()));
        let mut g = a.map(|_| Vec3::zeros());
        color_loss_term(&a, &b, 0.2, Some(&mut g)).unwrap();
        let h = 1e-7;
        for &(x, y, c) in &[(0, 0, 0), (6, 5, 2), (13, 11, 1)] {
            let mut ap = a.clone();
            ap.get_mut(x, y)[c] += h;
            let mut am = a.clone();
            am.get_mut(x, y)[c] -= h;
            let fd = (color_loss(&ap, &b, 0.2).unwrap() - color_loss(&am, &b, 0.2).unwrap()) / (2.0 * h);
            assert!((fd - g.get(x, y)[c]).abs() < 1e-6);
        }
    }

    #[test]
    fn depth_loss_masking() {
        let pm = Map::filled(8, 8, 2.0);
        let rendered = Map::filled(8, 8, 2.1);
        let alpha = Map::filled(8, 8, 1.0);
        let reliable = ReliabilityMask::uniform(8, 8, Label::Reliable);
        let unreliable = ReliabilityMask::uniform(8, 8, Label::Unreliable);
        assert_eq!(depth_loss(&pm, &alpha, &pm, &reliable, 0.5).unwrap(), 0.0);
        assert!((depth_loss(&rendered, &alpha, &pm, &reliable, 0.5).unwrap() - 0.1).abs() < 1e-12);
        assert_eq!(depth_loss(&rendered, &alpha, &pm, &unreliable, 0.5).unwrap(), 0.0);
        let faint = Map::filled(8, 8, 0.4);
        assert_eq!(depth_loss(&rendered, &faint, &pm, &reliable, 0.5).unwrap(), 0.0);
    }

    #[test]
    fn normal_prior_cases() {
        let n = Map::filled(6, 6, Vec3::new(0.0, 0.0, -1.0));
        let alpha = Map::filled(6, 6, 1.0);
        let un = ReliabilityMask::uniform(6, 6, Label::Unreliable);
        let rel = ReliabilityMask::uniform(6, 6, Label::Reliable);
        assert_eq!(normal_prior_loss(&n, &alpha, &n, &un, 0.5).unwrap(), 0.0);
        let anti = n.map(|v| -v);
        assert!((normal_prior_loss(&n, &alpha, &anti, &un, 0.5).unwrap() - 2.0).abs() < 1e-12);
        let ortho = Map::filled(6, 6, Vec3::new(1.0, 0.0, 0.0));
        assert!((normal_prior_loss(&n, &alpha, &ortho, &un, 0.5).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(normal_prior_loss(&n, &alpha, &anti, &rel, 0.5).unwrap(), 0.0);
    }

    #[test]
    fn normal_from_fronto_parallel_depth() {
        let cam = camera();
        let depth = Map::filled(32, 24, 3.0);
        let n = normal_from_depth(&depth, &cam);
        for y in 0..23 {
            for x in 0..31 {
                assert!((n.get(x, y) - Vec3::new(0.0, 0.0, -1.0)).norm() < 1e-12);
            }
        }
        assert_eq!(*n.get(31, 5), Vec3::zeros());
        let mut holed = depth.clone();
        *holed.get_mut(10, 10) = 0.0;
        let n = normal_from_depth(&holed, &cam);
        assert_eq!(*n.get(9, 10), Vec3::zeros());
        assert_eq!(*n.get(10, 9), Vec3::zeros());
        assert_eq!(*n.get(10, 10), Vec3::zeros());
    }

    #[test]
    fn normal_from_slanted_plane_depth() {
        let cam = camera();
        let normal = Vec3::new(0.3, -0.4, -1.0).normalize();
        let depth = plane_depth(&cam, normal, 2.0);
        let n = normal_from_depth(&depth, &cam);
        for y in 1..22 {
            for x in 1..30 {
                let angle = n.get(x, y).dot(&normal).clamp(-1.0, 1.0).acos().to_degrees();
                assert!(angle < 0.5, "{angle}");
            }
        }
    }

    #[test]
    fn consistency_cases() {
        let cam = camera();
        let normal = Vec3::new(0.2, 0.1, -1.0).normalize();
        let depth = plane_depth(&cam, normal, 2.0);
        let mut rendered = Map::filled(32, 24, normal);
        assert!(depth_normal_consistency_loss(&depth, &rendered, &cam).unwrap() < 1e-6);
        let derived = normal_from_depth(&depth, &cam);
        for (r, d) in rendered.data.iter_mut().zip(&derived.data) {
            if *d != Vec3::zeros() {
                *r = d.cross(&Vec3::new(0.0, 1.0, 0.0)).normalize();
            }
        }
        // rotated 90 degrees from the derived normals about an orthogonal axis
        let v = depth_normal_consistency_loss(&depth, &rendered, &cam).unwrap();
        assert!((v - 1.0).abs() < 1e-9);
    }

    #[test]
    fn consistency_gradient_matches_finite_differences() {
        let cam = camera();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let depth = Map::from_fn(32, 24, |_, _| 2.0 + rng.gen::<f64>() * 0.05);
        let normal = Map::from_fn(32, 24, |_, _| {
            Vec3::new(rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3), -1.0).normalize()
        });
        let mut gd = Map::filled(32, 24, 0.0);
        let mut gn = Map::filled(32, 24, Vec3::zeros());
        depth_normal_consistency_term(&depth, &normal, &cam, Some((&mut gd, &mut gn))).unwrap();
        let f = |d: &DepthMap, n: &NormalMap| depth_normal_consistency_loss(d, n, &cam).unwrap();
        let h = 1e-6;
        for &(x, y) in &[(3, 4), (10, 10), (31, 23), (0, 0)] {
            let mut dp = depth.clone();
            *dp.get_mut(x, y) += h;
            let mut dm = depth.clone();
            *dm.get_mut(x, y) -= h;
            let fd = (f(&dp, &normal) - f(&dm, &normal)) / (2.0 * h);
            assert!(
                (fd - gd.get(x, y)).abs() < 1e-6 * (1.0 + fd.abs()),
                "{fd} {}",
                gd.get(x, y)
            );
            let mut np = normal.clone();
            np.get_mut(x, y)[1] += h;
            let mut nm = normal.clone();
            nm.get_mut(x, y)[1] -= h;
            let fd = (f(&depth, &np) - f(&depth, &nm)) / (2.0 * h);
            assert!((fd - gn.get(x, y)[1]).abs() < 1e-6);
        }
    }

    #[test]
    fn total_loss_combination() {
        let w = LossWeights::default();
        assert_eq!(total_loss(0.0, 0.0, 0.0, 0.0, &w).total, 0.0);
        assert!((total_loss(0.1, 0.2, 0.3, 0.4, &w).total - 0.9).abs() < 1e-12);
        let only_color = LossWeights {
            w_nc: 0.0,
            w_np: 0.0,
            w_d: 0.0,
            ..w
        };
        assert_eq!(total_loss(0.1, 0.2, 0.3, 0.4, &only_color).total, 0.1);
    }
}
