//! Pinhole cameras, relative poses and plane-induced homographies.
//!
//! Cameras map world points with `x_cam = R x_world + t`; `+z` looks forward
//! and pixel centers sit at integer coordinates with the origin at the
//! top-left corner.

use nalgebra::{Matrix3, UnitQuaternion, Vector2, Vector3};

use crate::{Error, Mat3, Result, Vec2, Vec3};

#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    /// World-to-camera rotation.
    pub rotation: Mat3,
    /// World-to-camera translation.
    pub translation: Vec3,
}

impl Camera {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
        rotation: Mat3,
        translation: Vec3,
    ) -> Result<Self> {
        let cam = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            rotation,
            translation,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Camera at `eye` looking at `target`; `up` is only a hint for roll.
    pub fn look_at(fx: f64, fy: f64, width: usize, height: usize, eye: Vec3, target: Vec3, up: Vec3) -> Result<Self> {
        let forward = (target - eye).normalize();
        // camera y points down the image
        let right = (-up).cross(&forward).normalize();
        let down = forward.cross(&right);
        let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let translation = -(rotation * eye);
        Self::new(
            fx,
            fy,
            (width as f64 - 1.0) / 2.0,
            (height as f64 - 1.0) / 2.0,
            width,
            height,
            rotation,
            translation,
        )
    }

    pub fn validate(&self) -> Result<()> {
        let ortho = (self.rotation.transpose() * self.rotation - Matrix3::identity()).norm();
        if !(ortho < 1e-9) || (self.rotation.determinant() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidCamera(format!(
                "rotation is not a proper rotation (|RtR - I| = {ortho:e})"
            )));
        }
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::InvalidCamera(format!(
                "focal lengths must be positive ({}, {})",
                self.fx, self.fy
            )));
        }
        if self.width < 8 || self.height < 8 {
            return Err(Error::InvalidCamera(format!(
                "image {}x{} is smaller than 8x8",
                self.width, self.height
            )));
        }
        if !(self.cx.is_finite() && self.cy.is_finite() && self.translation.iter().all(|v| v.is_finite())) {
            return Err(Error::InvalidCamera("non-finite parameters".into()));
        }
        Ok(())
    }

    pub fn intrinsics(&self) -> Mat3 {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn intrinsics_inverse(&self) -> Mat3 {
        Matrix3::new(
            1.0 / self.fx,
            0.0,
            -self.cx / self.fx,
            0.0,
            1.0 / self.fy,
            -self.cy / self.fy,
            0.0,
            0.0,
            1.0,
        )
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vec3 {
        -(self.rotation.transpose() * self.translation)
    }

    /// World-space direction of the optical axis.
    pub fn forward(&self) -> Vec3 {
        self.rotation.row(2).transpose()
    }

    #[inline]
    pub fn world_to_camera(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    #[inline]
    pub fn camera_to_world(&self, p: &Vec3) -> Vec3 {
        self.rotation.transpose() * (p - self.translation)
    }

    /// Camera-frame ray through `pixel`, scaled so that its z component is 1.
    #[inline]
    pub fn pixel_ray(&self, pixel: &Vec2) -> Vec3 {
        Vector3::new((pixel.x - self.cx) / self.fx, (pixel.y - self.cy) / self.fy, 1.0)
    }

    #[inline]
    pub fn pixel_ray_xy(&self, x: f64, y: f64) -> Vec3 {
        Vector3::new((x - self.cx) / self.fx, (y - self.cy) / self.fy, 1.0)
    }

    /// Projects a camera-frame point; the caller guarantees `z > 0`.
    #[inline]
    pub fn project_camera_point(&self, p: &Vec3) -> Vec2 {
        Vector2::new(self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy)
    }

    pub fn in_image(&self, pixel: &Vec2) -> bool {
        pixel.x >= 0.0 && pixel.y >= 0.0 && pixel.x <= (self.width - 1) as f64 && pixel.y <= (self.height - 1) as f64
    }

    /// Nearest integer pixel, if it lies inside the image.
    pub fn nearest_pixel(&self, pixel: &Vec2) -> Option<(usize, usize)> {
        let x = pixel.x.round();
        let y = pixel.y.round();
        if x < 0.0 || y < 0.0 || x >= self.width as f64 || y >= self.height as f64 {
            None
        } else {
            Some((x as usize, y as usize))
        }
    }

    pub fn from_quaternion(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
        qwxyz: [f64; 4],
        translation: Vec3,
    ) -> Result<Self> {
        let q = nalgebra::Quaternion::new(qwxyz[0], qwxyz[1], qwxyz[2], qwxyz[3]);
        if !(q.norm() > 0.0) {
            return Err(Error::InvalidCamera("zero quaternion".into()));
        }
        let rotation = UnitQuaternion::from_quaternion(q).to_rotation_matrix().into_inner();
        Self::new(fx, fy, cx, cy, width, height, rotation, translation)
    }

    /// Rotation as a unit quaternion `(w, x, y, z)` with `w >= 0`.
    pub fn quaternion(&self) -> [f64; 4] {
        let rot = nalgebra::Rotation3::from_matrix_unchecked(self.rotation);
        let q = UnitQuaternion::from_rotation_matrix(&rot);
        let q = if q.w < 0.0 { -q.into_inner() } else { q.into_inner() };
        [q.w, q.i, q.j, q.k]
    }
}

/// Rigid transform `x_a = R x_b + t` between two camera frames.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelativePose {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl RelativePose {
    /// Pose mapping `from`-camera coordinates into `to`-camera coordinates.
    pub fn between(to: &Camera, from: &Camera) -> Self {
        let rotation = to.rotation * from.rotation.transpose();
        let translation = to.translation - rotation * from.translation;
        Self { rotation, translation }
    }

    /// `self` maps B to A and `other` maps C to B; the result maps C to A.
    pub fn compose(&self, other: &RelativePose) -> RelativePose {
        RelativePose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }
}

/// A local plane for one pixel: depth along the pixel ray and a unit normal,
/// both in the camera frame of the view that owns the pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlaneHypothesis {
    pub depth: f64,
    pub normal: Vec3,
}

impl PlaneHypothesis {
    /// Validates depth, unit length and front-facing orientation along `ray`.
    pub fn new(depth: f64, normal: Vec3, ray: &Vec3) -> Result<Self> {
        let hyp = Self { depth, normal };
        if hyp.is_valid(ray) {
            Ok(hyp)
        } else {
            Err(Error::InvalidHypothesis(format!(
                "depth {depth}, normal {:?}",
                normal.as_slice()
            )))
        }
    }

    pub fn is_valid(&self, ray: &Vec3) -> bool {
        self.depth > 0.0
            && self.depth.is_finite()
            && (self.normal.norm() - 1.0).abs() <= 1e-9
            && self.normal.dot(ray) < 0.0
    }

    /// Camera-frame point of the hypothesis at the anchor pixel ray.
    pub fn point(&self, ray: &Vec3) -> Vec3 {
        ray * self.depth
    }

    /// Offset `d` of the plane `n.x + d = 0` through the anchored point.
    pub fn plane_offset(&self, ray: &Vec3) -> f64 {
        -self.normal.dot(&self.point(ray))
    }

    /// Moves the hypothesis to another pixel ray by intersecting its plane
    /// with that ray. Returns `None` if the result is not a valid hypothesis.
    pub fn reanchor(&self, from_ray: &Vec3, to_ray: &Vec3) -> Option<PlaneHypothesis> {
        let denom = self.normal.dot(to_ray);
        if denom >= 0.0 {
            return None;
        }
        let depth = self.normal.dot(&self.point(from_ray)) / denom;
        (depth > 0.0 && depth.is_finite()).then_some(PlaneHypothesis {
            depth,
            normal: self.normal,
        })
    }
}

/// Projects a world point into `camera`, returning the pixel and its depth.
pub fn project(camera: &Camera, point: &Vec3) -> Result<(Vec2, f64)> {
    let p = camera.world_to_camera(point);
    if p.z <= 0.0 {
        return Err(Error::BehindCamera(p.z));
    }
    Ok((camera.project_camera_point(&p), p.z))
}

pub fn backproject(camera: &Camera, pixel: &Vec2, depth: f64) -> Result<Vec3> {
    if !(depth > 0.0) {
        return Err(Error::NonPositiveDepth(depth));
    }
    Ok(camera.camera_to_world(&(camera.pixel_ray(pixel) * depth)))
}

/// Homography taking reference pixels on the hypothesis plane to source pixels.
///
/// `H = K_src (R - t n^T / d) K_ref^-1` where `n.x + d = 0` is the plane in the
/// reference frame and `(R, t)` maps reference to source coordinates. The
/// result is scaled so that `H[2][2] = 1` whenever that entry is nonzero.
pub fn induced_homography(
    reference: &Camera,
    source: &Camera,
    anchor_pixel: &Vec2,
    hyp: &PlaneHypothesis,
) -> Result<Mat3> {
    let ray = reference.pixel_ray(anchor_pixel);
    let d = hyp.plane_offset(&ray);
    if d.abs() < 1e-12 {
        return Err(Error::DegeneratePlane);
    }
    let rel = RelativePose::between(source, reference);
    let h = source.intrinsics()
        * (rel.rotation - rel.translation * hyp.normal.transpose() / d)
        * reference.intrinsics_inverse();
    let s = h[(2, 2)];
    Ok(if s != 0.0 { h / s } else { h })
}

/// Applies a homography to a pixel; `None` when the point maps to infinity
/// or behind the projection center.
#[inline]
pub fn apply_homography(h: &Mat3, x: f64, y: f64) -> Option<(f64, f64)> {
    let w = h[(2, 0)] * x + h[(2, 1)] * y + h[(2, 2)];
    if w.abs() < 1e-15 {
        return None;
    }
    Some((
        (h[(0, 0)] * x + h[(0, 1)] * y + h[(0, 2)]) / w,
        (h[(1, 0)] * x + h[(1, 1)] * y + h[(1, 2)]) / w,
    ))
}

/// Rotates `v` by `angle` radians about the unit `axis` (Rodrigues).
pub fn rotate_about(v: &Vec3, axis: &Vec3, angle: f64) -> Vec3 {
    let (s, c) = angle.sin_cos();
    v * c + axis.cross(v) * s + axis * (axis.dot(v) * (1.0 - c))
}

/// Two unit vectors spanning the plane orthogonal to the unit vector `n`.
pub fn tangent_basis(n: &Vec3) -> (Vec3, Vec3) {
    let helper = if n.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    let t1 = n.cross(&helper).normalize();
    let t2 = n.cross(&t1);
    (t1, t2)
}
