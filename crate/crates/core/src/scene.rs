//! Flattened Gaussian surfels and the scene that holds them.
//!
//! Parameters are stored unconstrained: the orientation as a raw quaternion
//! that is normalized on use, scales as logarithms and opacity as a logit.
//! By convention the third scale is the smallest one, so the third rotated
//! axis is the surfel normal.

use std::path::Path;

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3, Vector4};
use rstar::primitives::GeomWithData;
use rstar::RTree;

use crate::io::ply;
use crate::{Error, Mat3, Result, Vec3};

/// Number of scalar parameters per surfel.
pub const PARAMS_PER_SURFEL: usize = 14;

/// Parameter groups sharing one optimizer step size.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamClass {
    Center,
    Orientation,
    Scale,
    Opacity,
    Color,
}

impl ParamClass {
    pub const ALL: [ParamClass; 5] = [
        ParamClass::Center,
        ParamClass::Orientation,
        ParamClass::Scale,
        ParamClass::Opacity,
        ParamClass::Color,
    ];

    /// Index range inside the per-surfel parameter vector.
    pub fn range(self) -> std::ops::Range<usize> {
        match self {
            ParamClass::Center => 0..3,
            ParamClass::Orientation => 3..7,
            ParamClass::Scale => 7..10,
            ParamClass::Opacity => 10..11,
            ParamClass::Color => 11..14,
        }
    }

    pub fn of_index(i: usize) -> ParamClass {
        match i {
            0..=2 => ParamClass::Center,
            3..=6 => ParamClass::Orientation,
            7..=9 => ParamClass::Scale,
            10 => ParamClass::Opacity,
            _ => ParamClass::Color,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ParamClass::Center => "center",
            ParamClass::Orientation => "orientation",
            ParamClass::Scale => "scale",
            ParamClass::Opacity => "opacity",
            ParamClass::Color => "color",
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Surfel {
    pub center: Vec3,
    /// Raw quaternion `(w, x, y, z)`; normalized whenever it is used.
    pub rotation: Vector4<f64>,
    pub log_scales: Vec3,
    pub opacity_logit: f64,
    pub color: Vec3,
}

impl Surfel {
    pub fn new(center: Vec3, orientation: UnitQuaternion<f64>, scales: Vec3, opacity: f64, color: Vec3) -> Self {
        let q = orientation.into_inner();
        Self {
            center,
            rotation: Vector4::new(q.w, q.i, q.j, q.k),
            log_scales: scales.map(f64::ln),
            opacity_logit: logit(opacity),
            color,
        }
    }

    pub fn orientation(&self) -> UnitQuaternion<f64> {
        let r = self.rotation;
        UnitQuaternion::from_quaternion(Quaternion::new(r[0], r[1], r[2], r[3]))
    }

    /// Rotation matrix whose columns are the surfel's local axes.
    pub fn rotation_matrix(&self) -> Mat3 {
        quaternion_matrix(&(self.rotation / self.rotation.norm()))
    }

    pub fn scales(&self) -> Vec3 {
        self.log_scales.map(f64::exp)
    }

    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_logit)
    }

    /// `R S S^T R^T`.
    pub fn covariance(&self) -> Mat3 {
        let r = self.rotation_matrix();
        let s2 = self.scales().map(|s| s * s);
        r * Matrix3::from_diagonal(&s2) * r.transpose()
    }

    /// World-space direction of the minimum-scale axis (unsigned).
    pub fn axis_normal(&self) -> Vec3 {
        self.rotation_matrix().column(2).into_owned()
    }

    /// The minimum-scale axis oriented against `view_dir`.
    pub fn normal(&self, view_dir: &Vec3) -> Vec3 {
        let n = self.axis_normal();
        if n.dot(view_dir) > 0.0 {
            -n
        } else {
            n
        }
    }

    pub fn params(&self) -> [f64; PARAMS_PER_SURFEL] {
        let mut p = [0.0; PARAMS_PER_SURFEL];
        p[0..3].copy_from_slice(self.center.as_slice());
        p[3..7].copy_from_slice(self.rotation.as_slice());
        p[7..10].copy_from_slice(self.log_scales.as_slice());
        p[10] = self.opacity_logit;
        p[11..14].copy_from_slice(self.color.as_slice());
        p
    }

    pub fn set_params(&mut self, p: &[f64; PARAMS_PER_SURFEL]) {
        self.center = Vector3::new(p[0], p[1], p[2]);
        self.rotation = Vector4::new(p[3], p[4], p[5], p[6]);
        self.log_scales = Vector3::new(p[7], p[8], p[9]);
        self.opacity_logit = p[10];
        self.color = Vector3::new(p[11], p[12], p[13]);
    }

    pub fn from_params(p: &[f64; PARAMS_PER_SURFEL]) -> Self {
        let mut s = Surfel::new(
            Vec3::zeros(),
            UnitQuaternion::identity(),
            Vec3::repeat(1.0),
            0.5,
            Vec3::zeros(),
        );
        s.set_params(p);
        s
    }
}

/// Rotation matrix of a unit quaternion stored as `(w, x, y, z)`.
pub fn quaternion_matrix(q: &Vector4<f64>) -> Mat3 {
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Normal of `surfel` facing a viewer looking along `view_dir`.
pub fn surfel_normal(surfel: &Surfel, view_dir: &Vec3) -> Vec3 {
    surfel.normal(view_dir)
}

pub fn covariance(surfel: &Surfel) -> Mat3 {
    surfel.covariance()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a Vec3>) -> Option<Self> {
        let mut it = points.into_iter();
        let first = *it.next()?;
        let (min, max) = it.fold((first, first), |(lo, hi), p| (lo.inf(p), hi.sup(p)));
        Some(Self { min, max })
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    pub fn extent(&self) -> Vec3 {
        self.max - self.min
    }

    /// Scales the box about its center.
    pub fn inflated(&self, factor: f64) -> Self {
        let c = self.center();
        let h = self.extent() * (0.5 * factor);
        Self { min: c - h, max: c + h }
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    pub fn clamp(&self, p: &Vec3) -> Vec3 {
        p.sup(&self.min).inf(&self.max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurfelScene {
    pub surfels: Vec<Surfel>,
    pub bounds: Aabb,
}

const CHECKPOINT_PROPERTIES: [&str; 17] = [
    "x", "y", "z", "nx", "ny", "nz", "qw", "qx", "qy", "qz", "s0", "s1", "s2", "opacity", "r", "g", "b",
];

impl SurfelScene {
    pub fn new(surfels: Vec<Surfel>) -> Result<Self> {
        let bounds = Aabb::from_points(surfels.iter().map(|s| &s.center)).ok_or(Error::EmptyScene)?;
        Ok(Self { surfels, bounds })
    }

    pub fn len(&self) -> usize {
        self.surfels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.surfels.is_empty()
    }

    /// Half the bounding-box diagonal.
    pub fn extent(&self) -> f64 {
        0.5 * self.bounds.extent().norm()
    }

    /// Restores the surfel invariants after an unconstrained update: unit
    /// quaternion, flat third axis no larger than `flat_ratio` times the
    /// smaller in-plane scale, opacity strictly inside (0, 1), colors in
    /// [0, 1] and centers inside the 1.5x inflated bounds.
    pub fn enforce_invariants(&mut self, flat_ratio: f64) {
        let allowed = self.bounds.inflated(1.5);
        let ln_ratio = flat_ratio.ln();
        for s in &mut self.surfels {
            let n = s.rotation.norm();
            s.rotation = if n > 1e-12 {
                s.rotation / n
            } else {
                Vector4::new(1.0, 0.0, 0.0, 0.0)
            };
            let cap = s.log_scales[0].min(s.log_scales[1]) + ln_ratio;
            if s.log_scales[2] > cap {
                s.log_scales[2] = cap;
            }
            s.opacity_logit = s.opacity_logit.clamp(-30.0, 30.0);
            s.color = s.color.map(|c| c.clamp(0.0, 1.0));
            s.center = allowed.clamp(&s.center);
        }
    }

    /// Binary little-endian PLY; scales are stored as logarithms and the
    /// opacity as a logit so that reloading is bit-exact.
    pub fn save_ply(&self, path: &Path) -> Result<()> {
        let rows: Vec<Vec<f64>> = self
            .surfels
            .iter()
            .map(|s| {
                let n = s.axis_normal();
                let mut row = Vec::with_capacity(CHECKPOINT_PROPERTIES.len());
                row.extend_from_slice(s.center.as_slice());
                row.extend_from_slice(n.as_slice());
                row.extend_from_slice(s.rotation.as_slice());
                row.extend_from_slice(s.log_scales.as_slice());
                row.push(s.opacity_logit);
                row.extend_from_slice(s.color.as_slice());
                row
            })
            .collect();
        ply::write_vertex_table(path, &CHECKPOINT_PROPERTIES, &rows)
    }

    pub fn load_ply(path: &Path) -> Result<Self> {
        let rows = ply::read_vertex_table(path, &CHECKPOINT_PROPERTIES)?;
        let surfels = rows
            .iter()
            .map(|r| Surfel {
                center: Vector3::new(r[0], r[1], r[2]),
                rotation: Vector4::new(r[6], r[7], r[8], r[9]),
                log_scales: Vector3::new(r[10], r[11], r[12]),
                opacity_logit: r[13],
                color: Vector3::new(r[14], r[15], r[16]),
            })
            .collect();
        Self::new(surfels)
    }
}

/// Mean distance from each point to its `k` nearest other points.
///
/// Coincident points contribute zero distance; a point whose neighbors all
/// coincide with it falls back to the smallest positive spacing in the set.
pub fn neighbor_spacing(points: &[Vec3], k: usize) -> Vec<f64> {
    let tree = RTree::bulk_load(
        points
            .iter()
            .enumerate()
            .map(|(i, p)| GeomWithData::new([p.x, p.y, p.z], i))
            .collect(),
    );
    let mut spacing: Vec<f64> = points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let dists: Vec<f64> = tree
                .nearest_neighbor_iter(&[p.x, p.y, p.z])
                .filter(|g| g.data != i)
                .take(k)
                .map(|g| (points[g.data] - p).norm())
                .collect();
            if dists.is_empty() {
                0.0
            } else {
                dists.iter().sum::<f64>() / dists.len() as f64
            }
        })
        .collect();
    let floor = spacing
        .iter()
        .copied()
        .filter(|&d| d > 0.0)
        .fold(f64::INFINITY, f64::min);
    let floor = if floor.is_finite() { floor } else { 1e-3 };
    for s in &mut spacing {
        if *s <= 0.0 {
            *s = floor;
        }
    }
    spacing
}

/// Builds one surfel per (uniformly subsampled) input point. In-plane scales
/// start at the mean distance to the three nearest points, the flat axis at
/// a tenth of that; opacity 0.5 and identity orientation.
pub fn init_from_points(points: &[Vec3], colors: &[Vec3], target_count: usize) -> Result<SurfelScene> {
    const MIN_POINTS: usize = 10;
    if points.len() < MIN_POINTS {
        return Err(Error::TooFewPoints {
            needed: MIN_POINTS,
            got: points.len(),
        });
    }
    if colors.len() != points.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} points but {} colors",
            points.len(),
            colors.len()
        )));
    }
    if let Some(i) = points.iter().position(|p| !p.iter().all(|v| v.is_finite())) {
        return Err(Error::NonFiniteInput(format!("initial point {i}")));
    }
    let target = target_count.clamp(1, points.len());
    let picked: Vec<usize> = (0..target).map(|i| i * points.len() / target).collect();
    let centers: Vec<Vec3> = picked.iter().map(|&i| points[i]).collect();
    let spacing = neighbor_spacing(&centers, 3);
    let surfels = picked
        .iter()
        .zip(&spacing)
        .map(|(&i, &d)| {
            Surfel::new(
                points[i],
                UnitQuaternion::identity(),
                Vector3::new(d, d, 0.1 * d),
                0.5,
                colors[i].map(|c| c.clamp(0.0, 1.0)),
            )
        })
        .collect();
    SurfelScene::new(surfels)
}
