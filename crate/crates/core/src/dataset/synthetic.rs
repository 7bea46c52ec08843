//! Analytic scenes rendered by exact ray casting, with full ground truth.
//!
//! Cameras sit on a horizontal arc of radius 1 around the scene and look at
//! it along world `+z` (world `y` points down). Images are supersampled 3x3;
//! depths and normals are exact at pixel centers, and rays that miss every
//! surface see a black background with no ground truth.

use noise::{NoiseFn, Perlin};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Dataset, View};
use crate::geometry::{rotate_about, tangent_basis};
use crate::mesh::TriangleMesh;
use crate::{Camera, Error, Map, Mat3, Result, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SceneKind {
    Plane,
    TwoPlanes,
    Sphere,
    Box,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Texture {
    Checker,
    Perlin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub scene_kind: SceneKind,
    pub texture: Texture,
    pub n_views: usize,
    /// `[width, height]` in pixels.
    pub resolution: [usize; 2],
    /// Maximum angular error of the prior normals, degrees.
    pub noise: f64,
    /// Checker cell size (or Perlin feature size), scene units.
    pub checker_size: f64,
    /// Number of sparse initialization points.
    pub init_points: usize,
    /// Standard deviation of the Gaussian noise on initialization points.
    pub point_noise: f64,
    /// Horizontal field of view, degrees.
    pub fov_deg: f64,
    /// Half-angle of the camera arc, degrees.
    pub arc_deg: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            scene_kind: SceneKind::Plane,
            texture: Texture::Checker,
            n_views: 8,
            resolution: [160, 120],
            noise: 5.0,
            checker_size: 0.1,
            init_points: 4000,
            point_noise: 0.004,
            fov_deg: 40.0,
            arc_deg: 25.0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if self.n_views < 2 {
            return bad(format!("n_views must be at least 2, got {}", self.n_views));
        }
        if self.resolution[0] < 8 || self.resolution[1] < 8 {
            return bad(format!("resolution {:?} is below 8x8", self.resolution));
        }
        if !(self.noise >= 0.0 && self.noise <= 90.0) {
            return bad(format!("noise {} must lie in [0, 90] degrees", self.noise));
        }
        if !(self.checker_size > 0.0) {
            return bad("checker_size must be positive".into());
        }
        if !(self.point_noise >= 0.0) {
            return bad("point_noise must be nonnegative".into());
        }
        if !(self.fov_deg > 1.0 && self.fov_deg < 170.0) {
            return bad(format!("fov_deg {} out of range", self.fov_deg));
        }
        if !(self.arc_deg >= 0.0 && self.arc_deg < 80.0) {
            return bad(format!("arc_deg {} out of range", self.arc_deg));
        }
        Ok(())
    }
}

/// A surface primitive that can be ray cast exactly.
#[derive(Debug, Clone)]
pub enum Shape {
    /// Rectangle spanned by unit axes `u`, `v` with half extents.
    Rect {
        center: Vec3,
        u: Vec3,
        v: Vec3,
        half: [f64; 2],
    },
    Sphere {
        center: Vec3,
        radius: f64,
    },
    /// Box with local axes as the columns of `axes`.
    Cuboid {
        center: Vec3,
        axes: Mat3,
        half: Vec3,
    },
}

impl Shape {
    /// Nearest hit with `t > 0` along `origin + t dir`, with the geometric normal.
    pub fn intersect(&self, origin: &Vec3, dir: &Vec3) -> Option<(f64, Vec3)> {
        match self {
            Shape::Rect { center, u, v, half } => {
                let n = u.cross(v);
                let denom = n.dot(dir);
                if denom.abs() < 1e-15 {
                    return None;
                }
                let t = n.dot(&(center - origin)) / denom;
                if t <= 0.0 {
                    return None;
                }
                let rel = origin + dir * t - center;
                (rel.dot(u).abs() <= half[0] && rel.dot(v).abs() <= half[1]).then_some((t, n))
            }
            Shape::Sphere { center, radius } => {
                let oc = origin - center;
                let a = dir.dot(dir);
                let b = oc.dot(dir);
                let c = oc.dot(&oc) - radius * radius;
                let disc = b * b - a * c;
                if disc < 0.0 {
                    return None;
                }
                let s = disc.sqrt();
                let t = [(-b - s) / a, (-b + s) / a].into_iter().find(|&t| t > 0.0)?;
                Some((t, (origin + dir * t - center) / *radius))
            }
            Shape::Cuboid { center, axes, half } => {
                let o = axes.transpose() * (origin - center);
                let d = axes.transpose() * dir;
                let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
                let mut enter_axis = 0;
                for a in 0..3 {
                    if d[a].abs() < 1e-15 {
                        if o[a].abs() > half[a] {
                            return None;
                        }
                        continue;
                    }
                    let ta = (-half[a] - o[a]) / d[a];
                    let tb = (half[a] - o[a]) / d[a];
                    let (lo, hi) = if ta < tb { (ta, tb) } else { (tb, ta) };
                    if lo > t0 {
                        t0 = lo;
                        enter_axis = a;
                    }
                    t1 = t1.min(hi);
                }
                if t0 > t1 || t0 <= 0.0 {
                    return None;
                }
                let mut local = Vec3::zeros();
                local[enter_axis] = -d[enter_axis].signum();
                Some((t0, axes * local))
            }
        }
    }

    fn mesh(&self) -> TriangleMesh {
        match self {
            Shape::Rect { center, u, v, half } => {
                let c = |a: f64, b: f64| center + u * (a * half[0]) + v * (b * half[1]);
                TriangleMesh {
                    vertices: vec![c(-1.0, -1.0), c(1.0, -1.0), c(1.0, 1.0), c(-1.0, 1.0)],
                    faces: vec![[0, 1, 2], [0, 2, 3]],
                }
            }
            Shape::Sphere { center, radius } => {
                let (rings, segments) = (48u32, 96u32);
                let mut m = TriangleMesh::default();
                m.vertices.push(center + Vec3::new(0.0, -radius, 0.0));
                for r in 1..rings {
                    let theta = std::f64::consts::PI * r as f64 / rings as f64;
                    for s in 0..segments {
                        let phi = std::f64::consts::TAU * s as f64 / segments as f64;
                        m.vertices.push(
                            center
                                + Vec3::new(theta.sin() * phi.cos(), -theta.cos(), theta.sin() * phi.sin()) * *radius,
                        );
                    }
                }
                m.vertices.push(center + Vec3::new(0.0, *radius, 0.0));
                let ring = |r: u32, s: u32| 1 + (r - 1) * segments + s % segments;
                let last = m.vertices.len() as u32 - 1;
                for s in 0..segments {
                    m.faces.push([0, ring(1, s + 1), ring(1, s)]);
                    m.faces.push([last, ring(rings - 1, s), ring(rings - 1, s + 1)]);
                }
                for r in 1..rings - 1 {
                    for s in 0..segments {
                        m.faces.push([ring(r, s), ring(r, s + 1), ring(r + 1, s + 1)]);
                        m.faces.push([ring(r, s), ring(r + 1, s + 1), ring(r + 1, s)]);
                    }
                }
                m
            }
            Shape::Cuboid { center, axes, half } => {
                let mut m = TriangleMesh::default();
                for i in 0..8 {
                    let s = Vec3::new(
                        if i & 1 != 0 { 1.0 } else { -1.0 },
                        if i & 2 != 0 { 1.0 } else { -1.0 },
                        if i & 4 != 0 { 1.0 } else { -1.0 },
                    );
                    m.vertices.push(center + axes * s.component_mul(half));
                }
                let quads = [
                    [0, 2, 3, 1],
                    [4, 5, 7, 6],
                    [0, 1, 5, 4],
                    [2, 6, 7, 3],
                    [0, 4, 6, 2],
                    [1, 3, 7, 5],
                ];
                for q in quads {
                    m.faces.push([q[0], q[1], q[2]]);
                    m.faces.push([q[0], q[2], q[3]]);
                }
                m
            }
        }
    }
}

fn rot_y(deg: f64) -> Mat3 {
    nalgebra::Rotation3::from_axis_angle(&Vec3::y_axis(), deg.to_radians()).into_inner()
}

fn rot_x(deg: f64) -> Mat3 {
    nalgebra::Rotation3::from_axis_angle(&Vec3::x_axis(), deg.to_radians()).into_inner()
}

/// Primitives of each scene kind and the point the cameras look at.
pub fn scene_shapes(kind: SceneKind) -> (Vec<Shape>, Vec3) {
    match kind {
        SceneKind::Plane => {
            let r = rot_y(30.0);
            (
                vec![Shape::Rect {
                    center: Vec3::new(0.0, 0.0, 0.05),
                    u: r.column(0).into_owned(),
                    v: r.column(1).into_owned(),
                    half: [0.25, 0.19],
                }],
                Vec3::new(0.0, 0.0, 0.05),
            )
        }
        SceneKind::TwoPlanes => {
            let r = rot_y(20.0);
            (
                vec![
                    Shape::Rect {
                        center: Vec3::new(0.0, 0.0, 0.15),
                        u: Vec3::x(),
                        v: Vec3::y(),
                        half: [0.25, 0.18],
                    },
                    Shape::Rect {
                        center: Vec3::new(0.03, 0.02, -0.08),
                        u: r.column(0).into_owned(),
                        v: r.column(1).into_owned(),
                        half: [0.09, 0.09],
                    },
                ],
                Vec3::new(0.0, 0.0, 0.05),
            )
        }
        SceneKind::Sphere => (
            vec![Shape::Sphere {
                center: Vec3::zeros(),
                radius: 0.2,
            }],
            Vec3::zeros(),
        ),
        SceneKind::Box => (
            vec![Shape::Cuboid {
                center: Vec3::zeros(),
                axes: rot_y(30.0) * rot_x(20.0),
                half: Vec3::new(0.15, 0.12, 0.1),
            }],
            Vec3::zeros(),
        ),
    }
}

/// Nearest hit over all shapes: `(t, outward normal)`.
pub fn cast(shapes: &[Shape], origin: &Vec3, dir: &Vec3) -> Option<(f64, Vec3)> {
    shapes
        .iter()
        .filter_map(|s| s.intersect(origin, dir))
        .min_by(|a, b| a.0.total_cmp(&b.0))
}

struct Shader {
    texture: Texture,
    size: f64,
    perlin: Perlin,
}

impl Shader {
    const LIGHT: [f64; 3] = [-0.3, -0.5, -0.8];
    const OFFSET: [f64; 3] = [0.0123, 0.0371, 0.0517];

    fn albedo(&self, p: &Vec3) -> Vec3 {
        let dark = Vec3::new(0.15, 0.2, 0.3);
        let light = Vec3::new(0.9, 0.85, 0.7);
        let q = (p + Vec3::from(Self::OFFSET)) / self.size;
        match self.texture {
            Texture::Checker => {
                let parity = (q.x.floor() + q.y.floor() + q.z.floor()) as i64;
                if parity.rem_euclid(2) == 0 {
                    light
                } else {
                    dark
                }
            }
            Texture::Perlin => {
                let v = self.perlin.get([q.x, q.y, q.z]) + 0.5 * self.perlin.get([2.0 * q.x, 2.0 * q.y, 2.0 * q.z]);
                let t = (0.5 + 0.6 * v).clamp(0.0, 1.0);
                dark + (light - dark) * t
            }
        }
    }

    fn shade(&self, p: &Vec3, n: &Vec3, view_dir: &Vec3) -> Vec3 {
        let n = if n.dot(view_dir) > 0.0 { -n } else { *n };
        let l = Vec3::from(Self::LIGHT).normalize();
        let diffuse = n.dot(&-l).max(0.0);
        self.albedo(p) * (0.35 + 0.65 * diffuse)
    }
}

/// Cameras evenly spaced on the arc, alternating slightly in height.
pub fn arc_cameras(spec: &SyntheticSpec, target: &Vec3) -> Result<Vec<Camera>> {
    let [w, h] = spec.resolution;
    let f = (w as f64 / 2.0) / (spec.fov_deg.to_radians() / 2.0).tan();
    (0..spec.n_views)
        .map(|k| {
            let s = if spec.n_views > 1 {
                k as f64 / (spec.n_views - 1) as f64 * 2.0 - 1.0
            } else {
                0.0
            };
            let angle = (s * spec.arc_deg).to_radians();
            let height = 0.08 * ((k % 3) as f64 - 1.0);
            let eye = target + Vec3::new(angle.sin(), height, -angle.cos());
            Camera::look_at(f, f, w, h, eye, *target, Vec3::new(0.0, -1.0, 0.0))
        })
        .collect()
}

pub fn gen_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    let (shapes, target) = scene_shapes(spec.scene_kind);
    let cameras = arc_cameras(spec, &target)?;
    let shader = Shader {
        texture: spec.texture,
        size: spec.checker_size,
        perlin: Perlin::new(seed as u32),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let [w, h] = spec.resolution;
    let sub = [-1.0 / 3.0, 0.0, 1.0 / 3.0];

    let mut views = Vec::with_capacity(cameras.len());
    for (k, camera) in cameras.into_iter().enumerate() {
        let origin = camera.center();
        let rt = camera.rotation.transpose();
        let mut depth = Map::filled(w, h, 0.0);
        let mut normal = Map::filled(w, h, Vec3::zeros());
        let mut image = Map::filled(w, h, Vec3::zeros());
        for y in 0..h {
            for x in 0..w {
                let mut color = Vec3::zeros();
                for dy in sub {
                    for dx in sub {
                        let dir = rt * camera.pixel_ray_xy(x as f64 + dx, y as f64 + dy);
                        if let Some((t, n)) = cast(&shapes, &origin, &dir) {
                            color += shader.shade(&(origin + dir * t), &n, &dir);
                        }
                    }
                }
                *image.get_mut(x, y) = color / 9.0;
                let ray = camera.pixel_ray_xy(x as f64, y as f64);
                let dir = rt * ray;
                if let Some((t, n)) = cast(&shapes, &origin, &dir) {
                    let facing = if n.dot(&dir) > 0.0 { -n } else { n };
                    *depth.get_mut(x, y) = t;
                    *normal.get_mut(x, y) = camera.rotation * facing;
                }
            }
        }
        let prior = corrupt_normals(&normal, &camera, spec.noise, &mut rng);
        views.push(View {
            name: format!("view_{k:03}.png"),
            image,
            camera,
            prior_normal: Some(prior),
            gt_depth: Some(depth),
            gt_normal: Some(normal),
        });
    }

    let (points, point_colors) = sample_points(&views, spec.init_points, spec.point_noise, &mut rng);
    let mut gt_mesh = TriangleMesh::default();
    for s in &shapes {
        gt_mesh.append(&s.mesh());
    }
    Ok(Dataset {
        views,
        points,
        point_colors,
        gt_mesh: Some(gt_mesh),
    })
}

/// Rotates every defined normal by an angle uniform in `[0, max_deg]` about
/// a random tangent axis, keeping it facing the camera.
fn corrupt_normals(normals: &Map<Vec3>, camera: &Camera, max_deg: f64, rng: &mut ChaCha8Rng) -> Map<Vec3> {
    let mut out = normals.clone();
    for y in 0..normals.height {
        for x in 0..normals.width {
            let n = *normals.get(x, y);
            if n == Vec3::zeros() {
                continue;
            }
            let angle = rng.gen::<f64>() * max_deg.to_radians();
            let phi = rng.gen::<f64>() * std::f64::consts::TAU;
            let (t1, t2) = tangent_basis(&n);
            let mut m = rotate_about(&n, &(t1 * phi.cos() + t2 * phi.sin()), angle).normalize();
            let ray = camera.pixel_ray_xy(x as f64, y as f64);
            if m.dot(&ray) >= 0.0 {
                m = n;
            }
            *out.get_mut(x, y) = m;
        }
    }
    out
}

/// Points back-projected from random pixels with ground-truth depth, with
/// isotropic Gaussian noise; colors come from the images.
fn sample_points(views: &[View], count: usize, sigma: f64, rng: &mut ChaCha8Rng) -> (Vec<Vec3>, Vec<Vec3>) {
    let mut points = Vec::with_capacity(count);
    let mut colors = Vec::with_capacity(count);
    let normal = Normal::new(0.0, sigma.max(0.0)).expect("valid deviation");
    let covered: usize = views
        .iter()
        .map(|v| {
            v.gt_depth
                .as_ref()
                .map_or(0, |d| d.data.iter().filter(|&&z| z > 0.0).count())
        })
        .sum();
    if covered == 0 {
        return (points, colors);
    }
    while points.len() < count {
        let v = &views[rng.gen_range(0..views.len())];
        let depth = v.gt_depth.as_ref().expect("synthetic views carry depth");
        let (x, y) = (rng.gen_range(0..depth.width), rng.gen_range(0..depth.height));
        let d = *depth.get(x, y);
        if d <= 0.0 {
            continue;
        }
        let p = v
            .camera
            .camera_to_world(&(v.camera.pixel_ray_xy(x as f64, y as f64) * d));
        let jitter = Vec3::new(normal.sample(rng), normal.sample(rng), normal.sample(rng));
        points.push(p + jitter);
        colors.push(*v.image.get(x, y));
    }
    (points, colors)
}

/// Whether the ground-truth surface point seen at `(x, y)` of `from` is
/// visible (not occluded) in `to`, within a relative depth tolerance.
pub fn gt_visible(from: &View, x: usize, y: usize, to: &View, tol: f64) -> Option<bool> {
    let d = *from.gt_depth.as_ref()?.get(x, y);
    if d <= 0.0 {
        return None;
    }
    let world = from
        .camera
        .camera_to_world(&(from.camera.pixel_ray_xy(x as f64, y as f64) * d));
    let pc = to.camera.world_to_camera(&world);
    if pc.z <= 0.0 {
        return Some(false);
    }
    let q = to.camera.project_camera_point(&pc);
    let (qx, qy) = to.camera.nearest_pixel(&q)?;
    let dj = *to.gt_depth.as_ref()?.get(qx, qy);
    Some(dj > 0.0 && (dj - pc.z).abs() / pc.z < tol)
}
