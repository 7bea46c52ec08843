//! Forward splatting of surfels and its exact reverse-mode derivative.
//!
//! Each pixel ray is intersected with the minimum-scale plane of every
//! surfel it may touch. The Gaussian is evaluated in 3D at the intersection
//! (the flat axis contributes `exp(0) = 1` there), giving the weight
//! `w = opacity * G`. Surfels are composited front to back in the order of
//! their center depth, ties broken by index. Color, depth (the ray-plane
//! intersection depth) and the camera-facing surfel normal share the same
//! weights `w_k T_k`; depth is divided by the accumulated alpha and the
//! normal is renormalized.

use nalgebra::Vector3;
use rayon::prelude::*;

use crate::scene::{SurfelScene, PARAMS_PER_SURFEL};
use crate::{Camera, DepthMap, Error, Map, Mat3, NormalMap, Result, RgbImage, Vec3};

const TILE: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderSettings {
    /// In-plane influence radius in standard deviations; `None` evaluates
    /// every surfel at every pixel.
    pub sigma_cutoff: Option<f64>,
    /// Compositing stops once transmittance drops below this value.
    pub min_transmittance: f64,
    /// Depth and normal are defined only where alpha exceeds this value.
    pub alpha_defined: f64,
}

impl Default for RenderSettings {
    fn default() -> Self {
        Self {
            sigma_cutoff: Some(3.0),
            min_transmittance: 1e-4,
            alpha_defined: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput {
    pub color: RgbImage,
    /// Alpha-normalized depth; 0 marks empty pixels.
    pub depth: DepthMap,
    /// Camera-frame unit normals; zero marks empty pixels.
    pub normal: NormalMap,
    pub alpha: Map<f64>,
    /// Depth of the surfel at which transmittance first drops below 0.5;
    /// 0 where it never does. Not differentiated.
    pub median_depth: DepthMap,
}

impl RenderOutput {
    pub fn width(&self) -> usize {
        self.alpha.width
    }

    pub fn height(&self) -> usize {
        self.alpha.height
    }
}

/// Per-surfel gradient in the layout of [`crate::scene::Surfel::params`].
#[derive(Debug, Clone, PartialEq)]
pub struct SceneGradient {
    pub params: Vec<[f64; PARAMS_PER_SURFEL]>,
}

impl SceneGradient {
    pub fn zeros(n: usize) -> Self {
        Self {
            params: vec![[0.0; PARAMS_PER_SURFEL]; n],
        }
    }

    pub fn is_zero(&self) -> bool {
        self.params.iter().all(|p| p.iter().all(|&v| v == 0.0))
    }
}

/// Surfel quantities that do not depend on the pixel.
struct Splat {
    index: usize,
    center: Vec3,
    axes: Mat3,
    inv_s2: [f64; 2],
    opacity: f64,
    color: Vec3,
    /// `n . (p - C)`
    plane_num: f64,
    normal: Vec3,
    normal_cam: Vec3,
    /// Inclusive pixel bounds `[x0, y0, x1, y1]`.
    bbox: [u32; 4],
}

impl Splat {
    fn covers(&self, x: usize, y: usize) -> bool {
        let (x, y) = (x as u32, y as u32);
        x >= self.bbox[0] && y >= self.bbox[1] && x <= self.bbox[2] && y <= self.bbox[3]
    }
}

struct Hit {
    slot: usize,
    gauss: f64,
    weight: f64,
    depth: f64,
    /// +1 when the stored axis already faces the camera, -1 otherwise.
    sign: f64,
    normal_cam: Vec3,
    denom: f64,
    delta: Vec3,
    u: [f64; 2],
    trans: f64,
}

struct Prepared<'a> {
    camera: &'a Camera,
    cam_center: Vec3,
    cam_rot_t: Mat3,
    splats: Vec<Splat>,
    tiles_x: usize,
    tiles: Vec<Vec<u32>>,
    settings: RenderSettings,
}

impl<'a> Prepared<'a> {
    fn new(scene: &SurfelScene, camera: &'a Camera, settings: RenderSettings) -> Result<Self> {
        if scene.is_empty() {
            return Err(Error::EmptyScene);
        }
        let cam_center = camera.center();
        let mut order: Vec<(f64, usize)> = scene
            .surfels
            .iter()
            .enumerate()
            .filter_map(|(i, s)| {
                let z = camera.world_to_camera(&s.center).z;
                (z > 1e-9).then_some((z, i))
            })
            .collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

        let tiles_x = camera.width.div_ceil(TILE);
        let tiles_y = camera.height.div_ceil(TILE);
        let mut tiles = vec![Vec::new(); tiles_x * tiles_y];
        let mut splats = Vec::with_capacity(order.len());
        for &(_, i) in &order {
            let s = &scene.surfels[i];
            let axes = s.rotation_matrix();
            let scales = s.scales();
            let bbox = match settings.sigma_cutoff {
                Some(k) => screen_bbox(camera, &s.center, &axes, &scales, k),
                None => Some((0, 0, camera.width - 1, camera.height - 1)),
            };
            let Some((x0, y0, x1, y1)) = bbox else {
                continue;
            };
            let slot = splats.len() as u32;
            for ty in y0 / TILE..=y1 / TILE {
                for tx in x0 / TILE..=x1 / TILE {
                    tiles[ty * tiles_x + tx].push(slot);
                }
            }
            let n = axes.column(2).into_owned();
            splats.push(Splat {
                index: i,
                center: s.center,
                axes,
                inv_s2: [1.0 / (scales[0] * scales[0]), 1.0 / (scales[1] * scales[1])],
                opacity: s.opacity(),
                color: s.color,
                plane_num: n.dot(&(s.center - cam_center)),
                normal: n,
                normal_cam: camera.rotation * n,
                bbox: [x0 as u32, y0 as u32, x1 as u32, y1 as u32],
            });
        }
        Ok(Self {
            camera,
            cam_center,
            cam_rot_t: camera.rotation.transpose(),
            splats,
            tiles_x,
            tiles,
            settings,
        })
    }

    fn ray(&self, x: usize, y: usize) -> Vec3 {
        self.cam_rot_t * self.camera.pixel_ray_xy(x as f64, y as f64)
    }

    /// Front-to-back composite of color, depth, camera-frame normal and alpha
    /// at pixel (x, y); the same traversal as [`Self::trace`].
    fn composite(&self, x: usize, y: usize) -> (Vec3, f64, Vec3, f64, f64) {
        let d = self.ray(x, y);
        let list = &self.tiles[(y / TILE) * self.tiles_x + x / TILE];
        let r2_max = self.settings.sigma_cutoff.map_or(f64::INFINITY, |k| k * k);
        let mut trans = 1.0;
        let (mut color, mut depth, mut normal, mut alpha) = (Vec3::zeros(), 0.0, Vec3::zeros(), 0.0);
        let mut median = 0.0;
        for &slot in list {
            let sp = &self.splats[slot as usize];
            if !sp.covers(x, y) {
                continue;
            }
            let denom = sp.normal.dot(&d);
            if denom.abs() < 1e-12 {
                continue;
            }
            let z = sp.plane_num / denom;
            if !(z > 1e-9) {
                continue;
            }
            let delta = self.cam_center + d * z - sp.center;
            let u0 = sp.axes.column(0).dot(&delta);
            let u1 = sp.axes.column(1).dot(&delta);
            let r2 = u0 * u0 * sp.inv_s2[0] + u1 * u1 * sp.inv_s2[1];
            if r2 > r2_max {
                continue;
            }
            let weight = sp.opacity * (-0.5 * r2).exp();
            let wt = weight * trans;
            color += sp.color * wt;
            depth += z * wt;
            normal += if denom > 0.0 { -sp.normal_cam } else { sp.normal_cam } * wt;
            alpha += wt;
            let next = trans * (1.0 - weight);
            if trans >= 0.5 && next < 0.5 {
                median = z;
            }
            trans = next;
            if trans < self.settings.min_transmittance {
                break;
            }
        }
        (color, depth, normal, alpha, median)
    }

    /// Contributions at pixel (x, y) in compositing order.
    fn trace(&self, x: usize, y: usize, hits: &mut Vec<Hit>) {
        hits.clear();
        let d = self.ray(x, y);
        let list = &self.tiles[(y / TILE) * self.tiles_x + x / TILE];
        let r2_max = self.settings.sigma_cutoff.map(|k| k * k);
        let mut trans = 1.0;
        for &slot in list {
            let sp = &self.splats[slot as usize];
            if !sp.covers(x, y) {
                continue;
            }
            let denom = sp.normal.dot(&d);
            if denom.abs() < 1e-12 {
                continue;
            }
            let depth = sp.plane_num / denom;
            if !(depth > 1e-9) {
                continue;
            }
            let delta = self.cam_center + d * depth - sp.center;
            let u0 = sp.axes.column(0).dot(&delta);
            let u1 = sp.axes.column(1).dot(&delta);
            let r2 = u0 * u0 * sp.inv_s2[0] + u1 * u1 * sp.inv_s2[1];
            if let Some(m) = r2_max {
                if r2 > m {
                    continue;
                }
            }
            let gauss = (-0.5 * r2).exp();
            let weight = sp.opacity * gauss;
            let sign = if denom > 0.0 { -1.0 } else { 1.0 };
            let normal_cam = sp.normal_cam * sign;
            hits.push(Hit {
                slot: slot as usize,
                gauss,
                weight,
                depth,
                sign,
                normal_cam,
                denom,
                delta,
                u: [u0, u1],
                trans,
            });
            trans *= 1.0 - weight;
            if trans < self.settings.min_transmittance {
                break;
            }
        }
    }
}

/// Pixel bounding box of the in-plane `k`-sigma rectangle, or the whole
/// image if a corner lies behind the camera. `None` if it misses the image.
fn screen_bbox(
    camera: &Camera,
    center: &Vec3,
    axes: &Mat3,
    scales: &Vec3,
    k: f64,
) -> Option<(usize, usize, usize, usize)> {
    let a0 = axes.column(0) * (k * scales[0]);
    let a1 = axes.column(1) * (k * scales[1]);
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for (s0, s1) in [(-1.0, -1.0), (-1.0, 1.0), (1.0, -1.0), (1.0, 1.0)] {
        let p = camera.world_to_camera(&(center + a0 * s0 + a1 * s1));
        if p.z <= 1e-9 {
            return Some((0, 0, camera.width - 1, camera.height - 1));
        }
        let px = camera.project_camera_point(&p);
        lo[0] = lo[0].min(px.x);
        lo[1] = lo[1].min(px.y);
        hi[0] = hi[0].max(px.x);
        hi[1] = hi[1].max(px.y);
    }
    let max_x = (camera.width - 1) as f64;
    let max_y = (camera.height - 1) as f64;
    if hi[0] < -1.0 || hi[1] < -1.0 || lo[0] > max_x + 1.0 || lo[1] > max_y + 1.0 {
        return None;
    }
    let x0 = (lo[0].floor() - 1.0).clamp(0.0, max_x) as usize;
    let y0 = (lo[1].floor() - 1.0).clamp(0.0, max_y) as usize;
    let x1 = (hi[0].ceil() + 1.0).clamp(0.0, max_x) as usize;
    let y1 = (hi[1].ceil() + 1.0).clamp(0.0, max_y) as usize;
    Some((x0, y0, x1, y1))
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Renderer {
    pub settings: RenderSettings,
}

impl Renderer {
    pub fn new(settings: RenderSettings) -> Self {
        Self { settings }
    }

    pub fn render(&self, scene: &SurfelScene, camera: &Camera) -> Result<RenderOutput> {
        let prep = Prepared::new(scene, camera, self.settings)?;
        let (w, h) = (camera.width, camera.height);
        let rows: Vec<Vec<(Vec3, f64, Vec3, f64, f64)>> = (0..h)
            .into_par_iter()
            .map(|y| {
                (0..w)
                    .map(|x| {
                        let (color, mut depth, mut normal, alpha, median) = prep.composite(x, y);
                        if alpha > self.settings.alpha_defined {
                            depth /= alpha;
                            let len = normal.norm();
                            normal = if len > 1e-12 { normal / len } else { Vec3::zeros() };
                        } else {
                            depth = 0.0;
                            normal = Vec3::zeros();
                        }
                        (color, depth, normal, alpha, median)
                    })
                    .collect()
            })
            .collect();
        let mut out = RenderOutput {
            color: Map::filled(w, h, Vec3::zeros()),
            depth: Map::filled(w, h, 0.0),
            normal: Map::filled(w, h, Vec3::zeros()),
            alpha: Map::filled(w, h, 0.0),
            median_depth: Map::filled(w, h, 0.0),
        };
        for (y, row) in rows.into_iter().enumerate() {
            for (x, (c, d, n, a, m)) in row.into_iter().enumerate() {
                let i = y * w + x;
                out.color.data[i] = c;
                out.depth.data[i] = d;
                out.normal.data[i] = n;
                out.alpha.data[i] = a;
                out.median_depth.data[i] = m;
            }
        }
        Ok(out)
    }

    /// Reverse-mode gradient of `sum(grad_color . color + grad_depth * depth
    /// + grad_normal . normal)` with respect to every surfel parameter.
    pub fn backward(
        &self,
        scene: &SurfelScene,
        camera: &Camera,
        out: &RenderOutput,
        grad_color: &RgbImage,
        grad_depth: &DepthMap,
        grad_normal: &NormalMap,
    ) -> Result<SceneGradient> {
        let (w, h) = (camera.width, camera.height);
        if out.width() != w || out.height() != h {
            return Err(Error::ShapeMismatch(format!(
                "render output {}x{} vs camera {w}x{h}",
                out.width(),
                out.height()
            )));
        }
        out.alpha.check_shape(grad_color, "color gradient")?;
        out.alpha.check_shape(grad_depth, "depth gradient")?;
        out.alpha.check_shape(grad_normal, "normal gradient")?;
        let prep = Prepared::new(scene, camera, self.settings)?;
        let n_splats = prep.splats.len();

        // Per-band accumulators: center(3), d/dR(9), log-scale(2), logit(1), color(3).
        const ACC: usize = 18;
        let band_rows = TILE;
        let bands: Vec<Vec<[f64; ACC]>> = (0..h.div_ceil(band_rows))
            .into_par_iter()
            .map(|band| {
                let mut acc = vec![[0.0; ACC]; n_splats];
                let mut hits = Vec::new();
                let y_end = ((band + 1) * band_rows).min(h);
                for y in band * band_rows..y_end {
                    for x in 0..w {
                        let i = y * w + x;
                        let gc = grad_color.data[i];
                        let gd = grad_depth.data[i];
                        let gn = grad_normal.data[i];
                        if gc == Vec3::zeros() && gd == 0.0 && gn == Vec3::zeros() {
                            continue;
                        }
                        prep.trace(x, y, &mut hits);
                        if hits.is_empty() {
                            continue;
                        }
                        self.backward_pixel(&prep, x, y, &hits, gc, gd, gn, &mut acc);
                    }
                }
                acc
            })
            .collect();

        let mut grad = SceneGradient::zeros(scene.len());
        let mut total = vec![[0.0; ACC]; n_splats];
        for band in &bands {
            for (t, b) in total.iter_mut().zip(band) {
                for k in 0..ACC {
                    t[k] += b[k];
                }
            }
        }
        for (slot, a) in total.iter().enumerate() {
            let sp = &prep.splats[slot];
            let surfel = &scene.surfels[sp.index];
            let g = &mut grad.params[sp.index];
            g[0..3].copy_from_slice(&a[0..3]);
            let g_rot = Mat3::from_column_slice(&a[3..12]);
            let gq = quaternion_backward(&surfel.rotation, &g_rot);
            g[3..7].copy_from_slice(&gq);
            g[7] = a[12];
            g[8] = a[13];
            g[9] = 0.0;
            g[10] = a[14];
            g[11..14].copy_from_slice(&a[15..18]);
        }
        Ok(grad)
    }

    #[allow(clippy::too_many_arguments)]
    fn backward_pixel(
        &self,
        prep: &Prepared,
        x: usize,
        y: usize,
        hits: &[Hit],
        gc: Vec3,
        gd: f64,
        gn: Vec3,
        acc: &mut [[f64; 18]],
    ) {
        let mut alpha = 0.0;
        let mut depth_acc = 0.0;
        let mut normal_acc = Vec3::zeros();
        for hit in hits {
            let wt = hit.weight * hit.trans;
            alpha += wt;
            depth_acc += hit.depth * wt;
            normal_acc += hit.normal_cam * wt;
        }
        let mut g_depth_acc = 0.0;
        let mut g_alpha = 0.0;
        let mut g_normal_acc = Vec3::zeros();
        if alpha > self.settings.alpha_defined {
            g_depth_acc = gd / alpha;
            g_alpha = -gd * depth_acc / (alpha * alpha);
            let len = normal_acc.norm();
            if len > 1e-12 {
                let nh = normal_acc / len;
                g_normal_acc = (gn - nh * nh.dot(&gn)) / len;
            }
        }

        let d = prep.ray(x, y);
        // suffix composite of the per-hit scalar attribute, restarted after each hit
        let mut suffix = 0.0;
        for hit in hits.iter().rev() {
            let sp = &prep.splats[hit.slot];
            let attr = gc.dot(&sp.color) + g_depth_acc * hit.depth + g_normal_acc.dot(&hit.normal_cam) + g_alpha;
            let g_weight = hit.trans * (attr - suffix);
            suffix = attr * hit.weight + (1.0 - hit.weight) * suffix;

            let wt = hit.weight * hit.trans;
            let a = &mut acc[hit.slot];
            a[15] += gc.x * wt;
            a[16] += gc.y * wt;
            a[17] += gc.z * wt;

            let alpha_k = sp.opacity;
            a[14] += g_weight * hit.gauss * alpha_k * (1.0 - alpha_k);
            let g_gauss = g_weight * alpha_k;
            let g_depth_direct = g_depth_acc * wt;
            let g_normal_cam = g_normal_acc * wt;

            let a0 = sp.axes.column(0).into_owned();
            let a1 = sp.axes.column(1).into_owned();
            let n = sp.axes.column(2).into_owned();
            let gu0 = -g_gauss * hit.gauss * hit.u[0] * sp.inv_s2[0];
            let gu1 = -g_gauss * hit.gauss * hit.u[1] * sp.inv_s2[1];
            a[12] += g_gauss * hit.gauss * hit.u[0] * hit.u[0] * sp.inv_s2[0];
            a[13] += g_gauss * hit.gauss * hit.u[1] * hit.u[1] * sp.inv_s2[1];

            let g_delta = a0 * gu0 + a1 * gu1;
            let g_a0 = hit.delta * gu0;
            let g_a1 = hit.delta * gu1;
            let g_depth_total = g_depth_direct + g_delta.dot(&d);
            let g_center = -g_delta + n * (g_depth_total / hit.denom);
            let g_n = -hit.delta * (g_depth_total / hit.denom) + prep.cam_rot_t * g_normal_cam * hit.sign;

            a[0] += g_center.x;
            a[1] += g_center.y;
            a[2] += g_center.z;
            // column-major d/dR
            for r in 0..3 {
                a[3 + r] += g_a0[r];
                a[6 + r] += g_a1[r];
                a[9 + r] += g_n[r];
            }
        }
    }
}

/// Gradient with respect to a raw (unnormalized) quaternion `(w, x, y, z)`
/// given the gradient with respect to the rotation matrix it induces.
pub fn quaternion_backward(raw: &nalgebra::Vector4<f64>, g: &Mat3) -> [f64; 4] {
    let norm = raw.norm();
    let q = raw / norm;
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    let g = |r: usize, c: usize| g[(r, c)];
    let gw = 2.0 * (-z * g(0, 1) + y * g(0, 2) + z * g(1, 0) - x * g(1, 2) - y * g(2, 0) + x * g(2, 1));
    let gx = 2.0
        * (y * g(0, 1) + z * g(0, 2) + y * g(1, 0) - 2.0 * x * g(1, 1) - w * g(1, 2) + z * g(2, 0) + w * g(2, 1)
            - 2.0 * x * g(2, 2));
    let gy = 2.0
        * (-2.0 * y * g(0, 0) + x * g(0, 1) + w * g(0, 2) + x * g(1, 0) + z * g(1, 2) - w * g(2, 0) + z * g(2, 1)
            - 2.0 * y * g(2, 2));
    let gz = 2.0
        * (-2.0 * z * g(0, 0) - w * g(0, 1) + x * g(0, 2) + w * g(1, 0) - 2.0 * z * g(1, 1)
            + y * g(1, 2)
            + x * g(2, 0)
            + y * g(2, 1));
    let gq = nalgebra::Vector4::new(gw, gx, gy, gz);
    let g_raw = (gq - q * q.dot(&gq)) / norm;
    [g_raw[0], g_raw[1], g_raw[2], g_raw[3]]
}

pub fn rasterize(scene: &SurfelScene, camera: &Camera) -> Result<RenderOutput> {
    Renderer::default().render(scene, camera)
}

pub fn backward(
    scene: &SurfelScene,
    camera: &Camera,
    out: &RenderOutput,
    grad_color: &RgbImage,
    grad_depth: &DepthMap,
    grad_normal: &NormalMap,
) -> Result<SceneGradient> {
    Renderer::default().backward(scene, camera, out, grad_color, grad_depth, grad_normal)
}

/// Depth of the intersection of the camera ray through `(x, y)` with the
/// plane of `surfel`, if it lies in front of the camera.
pub fn ray_plane_depth(camera: &Camera, surfel: &crate::scene::Surfel, x: f64, y: f64) -> Option<f64> {
    let d = camera.rotation.transpose() * camera.pixel_ray_xy(x, y);
    let n = surfel.axis_normal();
    let denom = n.dot(&d);
    if denom.abs() < 1e-12 {
        return None;
    }
    let z = n.dot(&(surfel.center - camera.center())) / denom;
    (z > 0.0).then_some(z)
}

#[allow(dead_code)]
fn _assert_vec(_: Vector3<f64>) {}
