//! Patch-match refinement of per-pixel plane hypotheses and multi-view
//! geometric verification.
//!
//! Each reference view is refined independently: pixels are visited in
//! raster order (forward) and then in reverse raster order, testing the
//! incumbent, the re-anchored planes of the already-visited neighbors and
//! random perturbations of the best candidate. Candidates are scored by a
//! robust multi-view NCC cost. Verification then checks every hypothesis
//! against the refined maps of neighboring views.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geometry::{apply_homography, induced_homography, rotate_about, tangent_basis};
use crate::{Camera, DepthMap, Error, GrayImage, Map, NormalMap, PlaneHypothesis, Result, Vec2, Vec3};

/// Cost reported for pixels whose patch does not fit in the reference image.
pub const MAX_COST: f64 = 2.0;

/// Perturbed candidates tried per pixel and sweep.
pub const PERTURBED_CANDIDATES: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PatchMatchConfig {
    pub patch_radius: usize,
    pub num_src_views: usize,
    /// Rounds of (forward, reverse) sweeps.
    pub sweeps: usize,
    pub perturb_depth_frac: f64,
    pub perturb_normal_deg: f64,
    /// Perturbation magnitudes are multiplied by `decay^sweep_index`.
    pub decay: f64,
    /// Patches with variance below this score 0.
    pub ncc_epsilon: f64,
    pub verify_px: f64,
    pub verify_rel_depth: f64,
    pub verify_normal_deg: f64,
    pub min_consistent: usize,
}

impl Default for PatchMatchConfig {
    fn default() -> Self {
        Self {
            patch_radius: 5,
            num_src_views: 4,
            sweeps: 2,
            perturb_depth_frac: 0.05,
            perturb_normal_deg: 15.0,
            decay: 0.5,
            ncc_epsilon: 1e-5,
            verify_px: 1.0,
            verify_rel_depth: 0.01,
            verify_normal_deg: 10.0,
            min_consistent: 2,
        }
    }
}

impl PatchMatchConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(format!("patchmatch: {msg}")));
        if self.patch_radius < 1 {
            return bad("patch_radius must be at least 1");
        }
        if self.num_src_views < 1 {
            return bad("num_src_views must be at least 1");
        }
        let positive = [
            ("ncc_epsilon", self.ncc_epsilon),
            ("verify_px", self.verify_px),
            ("verify_rel_depth", self.verify_rel_depth),
            ("verify_normal_deg", self.verify_normal_deg),
            ("decay", self.decay),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return bad(&format!("{name} must be positive"));
            }
        }
        if !(self.perturb_depth_frac >= 0.0 && self.perturb_depth_frac < 1.0) {
            return bad("perturb_depth_frac must lie in [0, 1)");
        }
        if !(self.perturb_normal_deg >= 0.0) {
            return bad("perturb_normal_deg must be nonnegative");
        }
        if self.min_consistent < 1 {
            return bad("min_consistent must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    Invalid,
    Unreliable,
    Reliable,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReliabilityMask {
    pub labels: Map<Label>,
    /// Number of neighbor views found consistent at each pixel.
    pub consistent: Map<u32>,
}

impl ReliabilityMask {
    pub fn uniform(width: usize, height: usize, label: Label) -> Self {
        Self {
            labels: Map::filled(width, height, label),
            consistent: Map::filled(width, height, 0),
        }
    }

    pub fn count(&self, label: Label) -> usize {
        self.labels.data.iter().filter(|&&l| l == label).count()
    }
}

/// Per-pixel plane hypotheses of one reference view.
#[derive(Debug, Clone, PartialEq)]
pub struct HypothesisMap {
    pub hyps: Map<PlaneHypothesis>,
    pub valid: Map<bool>,
}

impl HypothesisMap {
    pub fn invalid(width: usize, height: usize) -> Self {
        Self {
            hyps: Map::filled(
                width,
                height,
                PlaneHypothesis {
                    depth: 1.0,
                    normal: Vec3::new(0.0, 0.0, -1.0),
                },
            ),
            valid: Map::filled(width, height, false),
        }
    }

    /// Pixels with positive depth and a normal facing the pixel ray become
    /// valid; normals are renormalized.
    pub fn from_maps(depth: &DepthMap, normal: &NormalMap, camera: &Camera) -> Result<Self> {
        depth.check_shape(normal, "hypothesis maps")?;
        let mut map = Self::invalid(depth.width, depth.height);
        for y in 0..depth.height {
            for x in 0..depth.width {
                let d = *depth.get(x, y);
                let n = *normal.get(x, y);
                let len = n.norm();
                if !(d > 0.0 && d.is_finite() && len > 1e-9) {
                    continue;
                }
                let hyp = PlaneHypothesis {
                    depth: d,
                    normal: n / len,
                };
                if hyp.is_valid(&camera.pixel_ray_xy(x as f64, y as f64)) {
                    map.set(x, y, Some(hyp));
                }
            }
        }
        Ok(map)
    }

    pub fn width(&self) -> usize {
        self.hyps.width
    }

    pub fn height(&self) -> usize {
        self.hyps.height
    }

    pub fn get(&self, x: usize, y: usize) -> Option<PlaneHypothesis> {
        self.valid.get(x, y).then(|| *self.hyps.get(x, y))
    }

    pub fn set(&mut self, x: usize, y: usize, hyp: Option<PlaneHypothesis>) {
        match hyp {
            Some(h) => {
                *self.hyps.get_mut(x, y) = h;
                *self.valid.get_mut(x, y) = true;
            }
            None => *self.valid.get_mut(x, y) = false,
        }
    }

    pub fn count_valid(&self) -> usize {
        self.valid.data.iter().filter(|&&v| v).count()
    }

    /// Depths with 0 at invalid pixels.
    pub fn depth_map(&self) -> DepthMap {
        Map::from_fn(self.width(), self.height(), |x, y| {
            self.get(x, y).map_or(0.0, |h| h.depth)
        })
    }

    /// Normals with `(0, 0, 0)` at invalid pixels.
    pub fn normal_map(&self) -> NormalMap {
        Map::from_fn(self.width(), self.height(), |x, y| {
            self.get(x, y).map_or(Vec3::zeros(), |h| h.normal)
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepDirection {
    /// Top-to-bottom, left-to-right; candidates from the left and top neighbors.
    ForwardTLBR,
    /// Bottom-to-top, right-to-left; candidates from the right and bottom neighbors.
    ReverseBRTL,
}

/// Zero-mean NCC between the reference patch around `pixel` and the source
/// patch warped through the plane of `hyp`.
#[allow(clippy::too_many_arguments)]
pub fn ncc_score(
    ref_img: &GrayImage,
    src_img: &GrayImage,
    camera_ref: &Camera,
    camera_src: &Camera,
    pixel: (usize, usize),
    hyp: &PlaneHypothesis,
    cfg: &PatchMatchConfig,
) -> Result<f64> {
    let r = cfg.patch_radius;
    let (x, y) = pixel;
    if x < r || y < r || x + r >= ref_img.width || y + r >= ref_img.height {
        return Err(Error::OutOfBounds { x, y });
    }
    let h = match induced_homography(camera_ref, camera_src, &Vec2::new(x as f64, y as f64), hyp) {
        Ok(h) => h,
        Err(_) => return Ok(-1.0),
    };
    let total = (2 * r + 1) * (2 * r + 1);
    let mut outside = 0usize;
    let (mut n, mut sr, mut ss, mut srr, mut sss, mut srs) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    for py in y - r..=y + r {
        for px in x - r..=x + r {
            let sample = apply_homography(&h, px as f64, py as f64).and_then(|(u, v)| src_img.sample_bilinear(u, v));
            let Some(s) = sample else {
                outside += 1;
                continue;
            };
            let v = *ref_img.get(px, py);
            n += 1.0;
            sr += v;
            ss += s;
            srr += v * v;
            sss += s * s;
            srs += v * s;
        }
    }
    if 2 * outside > total {
        return Ok(-1.0);
    }
    let mr = sr / n;
    let ms = ss / n;
    let var_r = (srr / n - mr * mr).max(0.0);
    let var_s = (sss / n - ms * ms).max(0.0);
    if var_r < cfg.ncc_epsilon || var_s < cfg.ncc_epsilon {
        return Ok(0.0);
    }
    let cov = srs / n - mr * ms;
    Ok((cov / (var_r * var_s).sqrt()).clamp(-1.0, 1.0))
}

/// `1 - mean` of the best half (rounded up) of the source-view scores.
pub fn aggregate_cost(scores: &mut [f64]) -> f64 {
    if scores.is_empty() {
        return MAX_COST;
    }
    scores.sort_by(|a, b| b.total_cmp(a));
    let k = scores.len().div_ceil(2);
    1.0 - scores[..k].iter().sum::<f64>() / k as f64
}

/// Views entering the cost of one reference view.
pub struct ViewSet<'a> {
    pub grays: &'a [GrayImage],
    pub cameras: &'a [Camera],
}

pub fn multiview_cost(
    views: &ViewSet,
    ref_view: usize,
    src_views: &[usize],
    pixel: (usize, usize),
    hyp: &PlaneHypothesis,
    cfg: &PatchMatchConfig,
) -> f64 {
    let mut scores = Vec::with_capacity(src_views.len());
    for &s in src_views {
        match ncc_score(
            &views.grays[ref_view],
            &views.grays[s],
            &views.cameras[ref_view],
            &views.cameras[s],
            pixel,
            hyp,
            cfg,
        ) {
            Ok(v) => scores.push(v),
            Err(_) => return MAX_COST,
        }
    }
    aggregate_cost(&mut scores)
}

/// The `k` other views whose viewing directions are closest in angle to the
/// reference view; ties go to the lower index.
pub fn select_source_views(cameras: &[Camera], reference: usize, k: usize) -> Vec<usize> {
    let f = cameras[reference].forward();
    let mut others: Vec<(f64, usize)> = cameras
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != reference)
        .map(|(i, c)| (f.dot(&c.forward()).clamp(-1.0, 1.0).acos(), i))
        .collect();
    others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    others.into_iter().take(k).map(|(_, i)| i).collect()
}

fn sweep_seed(seed: u64, sweep_index: usize) -> u64 {
    seed ^ (sweep_index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Per-view seed derived from a run seed.
pub fn view_seed(seed: u64, view: usize) -> u64 {
    seed.wrapping_mul(0xD129_1B2A_83C6_4E0F) ^ (view as u64).wrapping_add(1).wrapping_mul(0xBF58_476D_1CE4_E5B9)
}

/// Random perturbation of `hyp` anchored on `ray`, shrinking geometrically
/// with `sweep_index`.
pub fn perturb(
    hyp: &PlaneHypothesis,
    ray: &Vec3,
    sweep_index: usize,
    rng: &mut impl Rng,
    cfg: &PatchMatchConfig,
) -> PlaneHypothesis {
    let scale = cfg.decay.powi(sweep_index as i32);
    let u = (rng.gen::<f64>() * 2.0 - 1.0) * cfg.perturb_depth_frac * scale;
    let angle = (rng.gen::<f64>() * 2.0 - 1.0) * cfg.perturb_normal_deg.to_radians() * scale;
    let phi = rng.gen::<f64>() * std::f64::consts::TAU;
    let (t1, t2) = tangent_basis(&hyp.normal);
    let axis = t1 * phi.cos() + t2 * phi.sin();
    let mut normal = rotate_about(&hyp.normal, &axis, angle).normalize();
    let facing = normal.dot(ray);
    if facing >= 0.0 {
        let r = ray.normalize();
        normal = (normal - r * (2.0 * normal.dot(&r))).normalize();
        if normal.dot(ray) >= 0.0 {
            normal = hyp.normal;
        }
    }
    PlaneHypothesis {
        depth: hyp.depth * (1.0 + u),
        normal,
    }
}

/// Cost of the current hypothesis at every pixel (`MAX_COST` where invalid).
pub fn cost_map(
    map: &HypothesisMap,
    views: &ViewSet,
    ref_view: usize,
    src_views: &[usize],
    cfg: &PatchMatchConfig,
) -> Map<f64> {
    let (w, h) = (map.width(), map.height());
    let rows: Vec<Vec<f64>> = (0..h)
        .into_par_iter()
        .map(|y| {
            (0..w)
                .map(|x| match map.get(x, y) {
                    Some(hyp) => multiview_cost(views, ref_view, src_views, (x, y), &hyp, cfg),
                    None => MAX_COST,
                })
                .collect()
        })
        .collect();
    Map::from_vec(w, h, rows.concat()).expect("cost map shape")
}

#[allow(clippy::too_many_arguments)]
fn sweep_in_place(
    map: &mut HypothesisMap,
    costs: &mut Map<f64>,
    views: &ViewSet,
    ref_view: usize,
    src_views: &[usize],
    direction: SweepDirection,
    sweep_index: usize,
    rng_seed: u64,
    cfg: &PatchMatchConfig,
) {
    let (w, h) = (map.width(), map.height());
    let camera = &views.cameras[ref_view];
    let mut rng = ChaCha8Rng::seed_from_u64(sweep_seed(rng_seed, sweep_index));
    let forward = direction == SweepDirection::ForwardTLBR;
    for step in 0..w * h {
        let idx = if forward { step } else { w * h - 1 - step };
        let (x, y) = (idx % w, idx / w);
        let Some(current) = map.get(x, y) else {
            continue;
        };
        let ray = camera.pixel_ray_xy(x as f64, y as f64);
        let mut best = current;
        let mut best_cost = *costs.get(x, y);

        let neighbors = if forward {
            [(x.checked_sub(1), Some(y)), (Some(x), y.checked_sub(1))]
        } else {
            [
                ((x + 1 < w).then_some(x + 1), Some(y)),
                (Some(x), (y + 1 < h).then_some(y + 1)),
            ]
        };
        for (nx, ny) in neighbors {
            let (Some(nx), Some(ny)) = (nx, ny) else {
                continue;
            };
            let Some(nh) = map.get(nx, ny) else {
                continue;
            };
            let from = camera.pixel_ray_xy(nx as f64, ny as f64);
            let Some(cand) = nh.reanchor(&from, &ray) else {
                continue;
            };
            let c = multiview_cost(views, ref_view, src_views, (x, y), &cand, cfg);
            if c < best_cost {
                best = cand;
                best_cost = c;
            }
        }
        let base = best;
        for _ in 0..PERTURBED_CANDIDATES {
            let cand = perturb(&base, &ray, sweep_index, &mut rng, cfg);
            if !cand.is_valid(&ray) {
                continue;
            }
            let c = multiview_cost(views, ref_view, src_views, (x, y), &cand, cfg);
            if c < best_cost {
                best = cand;
                best_cost = c;
            }
        }
        map.set(x, y, Some(best));
        *costs.get_mut(x, y) = best_cost;
    }
}

/// One directional sweep over the map of `ref_view`.
#[allow(clippy::too_many_arguments)]
pub fn propagate_sweep(
    map: &HypothesisMap,
    views: &ViewSet,
    ref_view: usize,
    direction: SweepDirection,
    sweep_index: usize,
    rng_seed: u64,
    cfg: &PatchMatchConfig,
) -> HypothesisMap {
    let src = select_source_views(views.cameras, ref_view, cfg.num_src_views);
    let mut costs = cost_map(map, views, ref_view, &src, cfg);
    let mut out = map.clone();
    sweep_in_place(
        &mut out,
        &mut costs,
        views,
        ref_view,
        &src,
        direction,
        sweep_index,
        rng_seed,
        cfg,
    );
    out
}

/// Refines every view's map with `cfg.sweeps` rounds of forward and reverse
/// sweeps. Views are processed in parallel.
pub fn refine(maps: &[HypothesisMap], views: &ViewSet, cfg: &PatchMatchConfig, seed: u64) -> Vec<HypothesisMap> {
    if cfg.sweeps == 0 {
        return maps.to_vec();
    }
    maps.par_iter()
        .enumerate()
        .map(|(v, map)| {
            let src = select_source_views(views.cameras, v, cfg.num_src_views);
            let mut out = map.clone();
            let mut costs = cost_map(&out, views, v, &src, cfg);
            let vs = view_seed(seed, v);
            for round in 0..cfg.sweeps {
                for (k, dir) in [SweepDirection::ForwardTLBR, SweepDirection::ReverseBRTL]
                    .into_iter()
                    .enumerate()
                {
                    sweep_in_place(&mut out, &mut costs, views, v, &src, dir, 2 * round + k, vs, cfg);
                }
            }
            out
        })
        .collect()
}

/// Whether `hyp` at pixel `p` of camera `ci` agrees with the map of `cj`.
fn consistent_with(
    ci: &Camera,
    p: (usize, usize),
    hyp: &PlaneHypothesis,
    cj: &Camera,
    map_j: &HypothesisMap,
    cfg: &PatchMatchConfig,
) -> bool {
    let ray_i = ci.pixel_ray_xy(p.0 as f64, p.1 as f64);
    let world = ci.camera_to_world(&hyp.point(&ray_i));
    let in_j = cj.world_to_camera(&world);
    if in_j.z <= 0.0 {
        return false;
    }
    let q_exact = cj.project_camera_point(&in_j);
    let Some(q) = cj.nearest_pixel(&q_exact) else {
        return false;
    };
    let Some(hyp_j) = map_j.get(q.0, q.1) else {
        return false;
    };
    let ray_q = cj.pixel_ray_xy(q.0 as f64, q.1 as f64);

    // (a) j's point at q reprojects near p
    let back = ci.world_to_camera(&cj.camera_to_world(&hyp_j.point(&ray_q)));
    if back.z <= 0.0 {
        return false;
    }
    let p_back = ci.project_camera_point(&back);
    if (p_back - Vec2::new(p.0 as f64, p.1 as f64)).norm() > cfg.verify_px {
        return false;
    }

    // (b) depth agreement at the exact projection
    let Some(at_q) = hyp_j.reanchor(&ray_q, &cj.pixel_ray(&q_exact)) else {
        return false;
    };
    if (at_q.depth - in_j.z).abs() / at_q.depth >= cfg.verify_rel_depth {
        return false;
    }

    // (c) normal agreement in the world frame
    let ni = ci.rotation.transpose() * hyp.normal;
    let nj = cj.rotation.transpose() * hyp_j.normal;
    ni.dot(&nj).clamp(-1.0, 1.0).acos().to_degrees() < cfg.verify_normal_deg
}

/// Labels every pixel by the number of neighbor views that agree with it.
pub fn geometric_verify(maps: &[HypothesisMap], cameras: &[Camera], cfg: &PatchMatchConfig) -> Vec<ReliabilityMask> {
    maps.par_iter()
        .enumerate()
        .map(|(i, map)| {
            let neighbors = select_source_views(cameras, i, cfg.num_src_views);
            let (w, h) = (map.width(), map.height());
            let mut mask = ReliabilityMask::uniform(w, h, Label::Invalid);
            for y in 0..h {
                for x in 0..w {
                    let Some(hyp) = map.get(x, y) else {
                        continue;
                    };
                    let count = neighbors
                        .iter()
                        .filter(|&&j| consistent_with(&cameras[i], (x, y), &hyp, &cameras[j], &maps[j], cfg))
                        .count() as u32;
                    *mask.consistent.get_mut(x, y) = count;
                    *mask.labels.get_mut(x, y) = if count as usize >= cfg.min_consistent {
                        Label::Reliable
                    } else {
                        Label::Unreliable
                    };
                }
            }
            mask
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Matrix3;

    /// Rectified cameras shifted along +x so that a fronto-parallel plane at
    /// `DEPTH` has an integer disparity of `DISP` pixels between neighbors.
    const DEPTH: f64 = 2.0;
    const DISP: usize = 4;
    const F: f64 = 80.0;

    fn texture(x: i64, y: i64) -> f64 {
        let mut h = (x.wrapping_mul(73_856_093) ^ y.wrapping_mul(19_349_663)) as u64;
        h ^= h >> 13;
        h = h.wrapping_mul(0x5bd1_e995);
        h ^= h >> 15;
        (h % 1000) as f64 / 1000.0
    }

    fn rectified(n: usize, w: usize, h: usize) -> (Vec<Camera>, Vec<GrayImage>) {
        let baseline = DISP as f64 * DEPTH / F;
        let cams: Vec<Camera> = (0..n)
            .map(|k| {
                Camera::new(
                    F,
                    F,
                    (w as f64 - 1.0) / 2.0,
                    (h as f64 - 1.0) / 2.0,
                    w,
                    h,
                    Matrix3::identity(),
                    Vec3::new(-(k as f64) * baseline, 0.0, 0.0),
                )
                .unwrap()
            })
            .collect();
        let grays = (0..n)
            .map(|k| Map::from_fn(w, h, |x, y| texture(x as i64 + (k * DISP) as i64, y as i64)))
            .collect();
        (cams, grays)
    }

    fn truth(w: usize, h: usize) -> HypothesisMap {
        let mut m = HypothesisMap::invalid(w, h);
        for y in 0..h {
            for x in 0..w {
                m.set(
                    x,
                    y,
                    Some(PlaneHypothesis {
                        depth: DEPTH,
                        normal: Vec3::new(0.0, 0.0, -1.0),
                    }),
                );
            }
        }
        m
    }

    #[test]
    fn self_match_scores_one() {
        let (cams, grays) = rectified(1, 40, 30);
        let cfg = PatchMatchConfig::default();
        let hyp = PlaneHypothesis {
            depth: 1.3,
            normal: Vec3::new(0.1, 0.2, -1.0).normalize(),
        };
        let s = ncc_score(&grays[0], &grays[0], &cams[0], &cams[0], (20, 15), &hyp, &cfg).unwrap();
        assert!((s - 1.0).abs() < 1e-6);
        assert!(matches!(
            ncc_score(&grays[0], &grays[0], &cams[0], &cams[0], (2, 15), &hyp, &cfg),
            Err(Error::OutOfBounds { .. })
        ));
    }

    #[test]
    fn constant_patch_scores_zero() {
        let (cams, _) = rectified(2, 40, 30);
        let flat = Map::filled(40, 30, 0.5);
        let cfg = PatchMatchConfig::default();
        let hyp = PlaneHypothesis {
            depth: DEPTH,
            normal: Vec3::new(0.0, 0.0, -1.0),
        };
        assert_eq!(
            ncc_score(&flat, &flat, &cams[0], &cams[1], (20, 15), &hyp, &cfg).unwrap(),
            0.0
        );
    }

    #[test]
    fn mostly_outside_scores_minus_one() {
        let (cams, grays) = rectified(2, 40, 30);
        let cfg = PatchMatchConfig::default();
        // a very near plane shifts the patch far outside the source image
        let hyp = PlaneHypothesis {
            depth: 0.05,
            normal: Vec3::new(0.0, 0.0, -1.0),
        };
        assert_eq!(
            ncc_score(&grays[0], &grays[1], &cams[0], &cams[1], (20, 15), &hyp, &cfg).unwrap(),
            -1.0
        );
    }

    #[test]
    fn correct_depth_beats_perturbed_depth() {
        let (cams, grays) = rectified(2, 48, 32);
        let cfg = PatchMatchConfig::default();
        let good = PlaneHypothesis {
            depth: DEPTH,
            normal: Vec3::new(0.0, 0.0, -1.0),
        };
        let bad = PlaneHypothesis {
            depth: DEPTH * 1.1,
            ..good
        };
        let sg = ncc_score(&grays[0], &grays[1], &cams[0], &cams[1], (24, 16), &good, &cfg).unwrap();
        let sb = ncc_score(&grays[0], &grays[1], &cams[0], &cams[1], (24, 16), &bad, &cfg).unwrap();
        assert!(sg > 0.999 && sg > sb);
    }

    #[test]
    fn aggregation_cases() {
        assert_eq!(aggregate_cost(&mut [1.0, 1.0, 1.0, 1.0]), 0.0);
        assert_eq!(aggregate_cost(&mut [-1.0, 1.0, 1.0, 1.0]), 0.0);
        assert_eq!(aggregate_cost(&mut [0.0, 0.0, 0.0]), 1.0);
        assert_eq!(aggregate_cost(&mut []), MAX_COST);
    }

    #[test]
    fn source_view_selection_is_by_angle() {
        let mk = |yaw: f64| {
            let r = nalgebra::Rotation3::from_euler_angles(0.0, yaw, 0.0).into_inner();
            Camera::new(50.0, 50.0, 16.0, 16.0, 32, 32, r, Vec3::zeros()).unwrap()
        };
        let cams: Vec<Camera> = [0.0, 0.3, -0.1, 0.2, -0.1].iter().map(|&a| mk(a)).collect();
        assert_eq!(select_source_views(&cams, 0, 3), vec![2, 4, 3]);
    }

    #[test]
    fn perturb_zero_magnitude_is_identity() {
        let cfg = PatchMatchConfig {
            perturb_depth_frac: 0.0,
            perturb_normal_deg: 0.0,
            ..Default::default()
        };
        let ray = Vec3::new(0.1, -0.2, 1.0);
        let hyp = PlaneHypothesis {
            depth: 1.7,
            normal: Vec3::new(0.2, 0.3, -1.0).normalize(),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for k in 0..4 {
            assert_eq!(perturb(&hyp, &ray, k, &mut rng, &cfg), hyp);
        }
    }

    #[test]
    fn perturb_keeps_hypotheses_valid() {
        let cfg = PatchMatchConfig {
            perturb_normal_deg: 80.0,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for i in 0..2000 {
            let ray = Vec3::new((i % 7) as f64 * 0.1 - 0.3, (i % 5) as f64 * 0.1 - 0.2, 1.0);
            let n = Vec3::new(0.9, 0.0, -0.1 - (i % 3) as f64 * 0.2).normalize();
            let hyp = PlaneHypothesis { depth: 2.0, normal: n };
            if !hyp.is_valid(&ray) {
                continue;
            }
            let p = perturb(&hyp, &ray, 0, &mut rng, &cfg);
            assert!(p.is_valid(&ray), "{p:?}");
        }
    }

    #[test]
    fn perturb_depth_distribution_is_bounded_and_symmetric() {
        let cfg = PatchMatchConfig::default();
        let ray = Vec3::new(0.0, 0.0, 1.0);
        let hyp = PlaneHypothesis {
            depth: 1.0,
            normal: Vec3::new(0.0, 0.0, -1.0),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let sweep = 1;
        let bound = cfg.perturb_depth_frac * cfg.decay;
        let n = 100_000;
        let us: Vec<f64> = (0..n)
            .map(|_| perturb(&hyp, &ray, sweep, &mut rng, &cfg).depth - 1.0)
            .collect();
        assert!(us.iter().all(|u| u.abs() <= bound + 1e-15));
        let mean = us.iter().sum::<f64>() / n as f64;
        let sigma_mean = bound / 3f64.sqrt() / (n as f64).sqrt();
        assert!(mean.abs() < 3.0 * sigma_mean);
        let var = us.iter().map(|u| u * u).sum::<f64>() / n as f64;
        assert!((var - bound * bound / 3.0).abs() < 0.02 * bound * bound);
    }

    #[test]
    fn optimal_map_is_a_fixed_point() {
        let (cams, grays) = rectified(5, 56, 40);
        let views = ViewSet {
            grays: &grays,
            cameras: &cams,
        };
        let cfg = PatchMatchConfig::default();
        let maps = vec![truth(56, 40); 5];
        let refined = refine(&maps, &views, &cfg, 11);
        assert_eq!(refined, maps);
    }

    #[test]
    fn single_seed_propagates_across_plane() {
        let (w, h) = (48, 36);
        let (cams, grays) = rectified(5, w, h);
        let views = ViewSet {
            grays: &grays,
            cameras: &cams,
        };
        let cfg = PatchMatchConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut map = HypothesisMap::invalid(w, h);
        for y in 0..h {
            for x in 0..w {
                let ray = cams[0].pixel_ray_xy(x as f64, y as f64);
                let normal = loop {
                    let n = Vec3::new(rng.gen_range(-0.7..0.7), rng.gen_range(-0.7..0.7), -1.0).normalize();
                    if n.dot(&ray) < 0.0 {
                        break n;
                    }
                };
                map.set(
                    x,
                    y,
                    Some(PlaneHypothesis {
                        depth: rng.gen_range(1.0..4.0),
                        normal,
                    }),
                );
            }
        }
        map.set(
            5,
            5,
            Some(PlaneHypothesis {
                depth: DEPTH,
                normal: Vec3::new(0.0, 0.0, -1.0),
            }),
        );
        let fwd = propagate_sweep(&map, &views, 0, SweepDirection::ForwardTLBR, 0, 1, &cfg);
        let out = propagate_sweep(&fwd, &views, 0, SweepDirection::ReverseBRTL, 1, 1, &cfg);
        let r = cfg.patch_radius;
        // pixels whose patch is fully inside at least two of the four sources
        let (mut good, mut total) = (0, 0);
        for y in r..h - r {
            for x in r + 2 * DISP..w - r {
                total += 1;
                if (out.get(x, y).unwrap().depth - DEPTH).abs() / DEPTH < 0.01 {
                    good += 1;
                }
            }
        }
        assert!(good as f64 >= 0.95 * total as f64, "{good}/{total}");
        let again = propagate_sweep(&fwd, &views, 0, SweepDirection::ReverseBRTL, 1, 1, &cfg);
        assert_eq!(again, out);
    }

    #[test]
    fn sweep_never_increases_cost() {
        let (w, h) = (40, 30);
        let (cams, grays) = rectified(3, w, h);
        let views = ViewSet {
            grays: &grays,
            cameras: &cams,
        };
        let cfg = PatchMatchConfig::default();
        let mut map = truth(w, h);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for y in 0..h {
            for x in 0..w {
                map.hyps.get_mut(x, y).depth *= 1.0 + rng.gen_range(-0.2..0.2);
            }
        }
        let src = select_source_views(&cams, 0, cfg.num_src_views);
        let before = cost_map(&map, &views, 0, &src, &cfg);
        let after_map = propagate_sweep(&map, &views, 0, SweepDirection::ForwardTLBR, 0, 3, &cfg);
        let after = cost_map(&after_map, &views, 0, &src, &cfg);
        for (a, b) in after.data.iter().zip(&before.data) {
            assert!(a <= b);
        }
    }

    #[test]
    fn verification_of_exact_and_scaled_maps() {
        let (w, h) = (48, 36);
        let (cams, _) = rectified(5, w, h);
        let cfg = PatchMatchConfig::default();
        let maps = vec![truth(w, h); 5];
        let masks = geometric_verify(&maps, &cams, &cfg);
        // pixels whose point is seen by at least two neighbors
        let mask = &masks[2];
        for y in 0..h {
            for x in 2 * DISP..w - 2 * DISP {
                assert_eq!(*mask.labels.get(x, y), Label::Reliable, "({x},{y})");
            }
        }

        let mut scaled = maps.clone();
        for hyp in scaled[2].hyps.data.iter_mut() {
            hyp.depth *= 1.5;
        }
        let masks = geometric_verify(&scaled, &cams, &cfg);
        assert!(masks[2].count(Label::Reliable) < w * h / 20);

        let mut holes = maps.clone();
        holes[1].set(3, 3, None);
        let masks = geometric_verify(&holes, &cams, &cfg);
        assert_eq!(*masks[1].labels.get(3, 3), Label::Invalid);
    }
}
