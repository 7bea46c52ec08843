//! Projective TSDF integration and marching-cubes extraction.

use std::collections::HashMap;
use std::sync::OnceLock;

use rayon::prelude::*;

use crate::mesh::TriangleMesh;
use crate::scene::Aabb;
use crate::{Camera, DepthMap, Error, Result, Vec3};

/// Upper bound on the number of voxels a volume may allocate.
pub const MAX_VOXELS: usize = 64_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct TsdfVolume {
    pub origin: Vec3,
    pub voxel_size: f64,
    pub dims: [usize; 3],
    pub truncation: f64,
    /// Normalized signed distance in `[-1, 1]`; positive in front of surfaces.
    pub tsdf: Vec<f64>,
    pub weight: Vec<f64>,
}

impl TsdfVolume {
    pub fn new(origin: Vec3, voxel_size: f64, dims: [usize; 3], truncation: f64) -> Result<Self> {
        if !(voxel_size > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "voxel size {voxel_size} must be positive"
            )));
        }
        if !(truncation >= 2.0 * voxel_size) {
            return Err(Error::InvalidConfig(format!(
                "truncation {truncation} must be at least twice the voxel size {voxel_size}"
            )));
        }
        let count = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|&c| c <= MAX_VOXELS)
            .ok_or(Error::VolumeTooLarge(
                dims.iter().map(|&d| d as f64).product::<f64>() as usize
            ))?;
        Ok(Self {
            origin,
            voxel_size,
            dims,
            truncation,
            tsdf: vec![1.0; count],
            weight: vec![0.0; count],
        })
    }

    /// Volume whose voxel centers cover `bounds`.
    pub fn covering(bounds: &Aabb, voxel_size: f64, truncation: f64) -> Result<Self> {
        let ext = bounds.extent();
        let mut dims = [0usize; 3];
        for a in 0..3 {
            let n = (ext[a] / voxel_size).ceil() + 1.0;
            if !(n.is_finite() && n < MAX_VOXELS as f64) {
                return Err(Error::VolumeTooLarge(usize::MAX));
            }
            dims[a] = (n as usize).max(2);
        }
        Self::new(bounds.min, voxel_size, dims, truncation)
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn voxel_center(&self, i: usize, j: usize, k: usize) -> Vec3 {
        self.origin + Vec3::new(i as f64, j as f64, k as f64) * self.voxel_size
    }

    /// Fuses one depth map (0 marks missing depth) with unit weight.
    pub fn integrate(&mut self, depth: &DepthMap, camera: &Camera) -> Result<()> {
        if depth.width != camera.width || depth.height != camera.height {
            return Err(Error::ShapeMismatch(format!(
                "depth {}x{} vs camera {}x{}",
                depth.width, depth.height, camera.width, camera.height
            )));
        }
        let [nx, ny, _] = self.dims;
        let slab = nx * ny;
        let origin = self.origin;
        let vs = self.voxel_size;
        let trunc = self.truncation;
        self.tsdf
            .par_chunks_mut(slab)
            .zip(self.weight.par_chunks_mut(slab))
            .enumerate()
            .for_each(|(k, (tsdf, weight))| {
                for j in 0..ny {
                    for i in 0..nx {
                        let p = origin + Vec3::new(i as f64, j as f64, k as f64) * vs;
                        let pc = camera.world_to_camera(&p);
                        if pc.z <= 0.0 {
                            continue;
                        }
                        let Some((px, py)) = camera.nearest_pixel(&camera.project_camera_point(&pc)) else {
                            continue;
                        };
                        let d = *depth.get(px, py);
                        if !(d > 0.0) {
                            continue;
                        }
                        let sdf = d - pc.z;
                        if sdf <= -trunc {
                            continue;
                        }
                        let v = (sdf / trunc).clamp(-1.0, 1.0);
                        let idx = i + nx * j;
                        let w = weight[idx];
                        tsdf[idx] = (tsdf[idx] * w + v) / (w + 1.0);
                        weight[idx] = w + 1.0;
                    }
                }
            });
        Ok(())
    }

    /// Marching cubes over cells whose eight corners all have weight at
    /// least `min_weight`. Triangles are wound so that their normals point
    /// toward positive tsdf.
    pub fn extract_mesh(&self, min_weight: f64) -> Result<TriangleMesh> {
        let [nx, ny, nz] = self.dims;
        if nx < 2 || ny < 2 || nz < 2 {
            return Err(Error::EmptySurface);
        }
        let table = case_table();
        let slabs: Vec<Vec<[EdgeKey; 3]>> = (0..nz - 1)
            .into_par_iter()
            .map(|k| {
                let mut tris = Vec::new();
                for j in 0..ny - 1 {
                    for i in 0..nx - 1 {
                        let mut case = 0usize;
                        let mut admissible = true;
                        for (c, off) in CORNERS.iter().enumerate() {
                            let idx = self.index(i + off[0], j + off[1], k + off[2]);
                            if self.weight[idx] < min_weight {
                                admissible = false;
                                break;
                            }
                            if self.tsdf[idx] >= 0.0 {
                                case |= 1 << c;
                            }
                        }
                        if !admissible {
                            continue;
                        }
                        for tri in &table[case] {
                            tris.push(tri.map(|e| {
                                let (a, _) = EDGES[e];
                                let off = CORNERS[a];
                                EdgeKey {
                                    voxel: [i + off[0], j + off[1], k + off[2]],
                                    axis: edge_axis(e),
                                }
                            }));
                        }
                    }
                }
                tris
            })
            .collect();

        let mut mesh = TriangleMesh::default();
        let mut ids: HashMap<EdgeKey, u32> = HashMap::new();
        for tris in &slabs {
            for tri in tris {
                let face = tri.map(|key| {
                    *ids.entry(key).or_insert_with(|| {
                        mesh.vertices.push(self.edge_vertex(&key));
                        (mesh.vertices.len() - 1) as u32
                    })
                });
                if face[0] != face[1] && face[1] != face[2] && face[0] != face[2] {
                    mesh.faces.push(face);
                }
            }
        }
        if mesh.faces.is_empty() {
            return Err(Error::EmptySurface);
        }
        Ok(mesh)
    }

    fn edge_vertex(&self, key: &EdgeKey) -> Vec3 {
        let [i, j, k] = key.voxel;
        let mut b = key.voxel;
        b[key.axis] += 1;
        let va = self.tsdf[self.index(i, j, k)];
        let vb = self.tsdf[self.index(b[0], b[1], b[2])];
        let pa = self.voxel_center(i, j, k);
        let pb = self.voxel_center(b[0], b[1], b[2]);
        let denom = va - vb;
        let t = if denom.abs() > 1e-300 {
            (va / denom).clamp(0.0, 1.0)
        } else {
            0.5
        };
        pa + (pb - pa) * t
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
struct EdgeKey {
    voxel: [usize; 3],
    axis: usize,
}

/// Cell corner offsets; bit `a` of the corner index is the offset along axis `a`.
const CORNERS: [[usize; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [0, 1, 0],
    [1, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [0, 1, 1],
    [1, 1, 1],
];

/// Cell edges as corner pairs `(a, b)` with `a < b` differing in one bit.
const EDGES: [(usize, usize); 12] = [
    (0, 1),
    (2, 3),
    (4, 5),
    (6, 7),
    (0, 2),
    (1, 3),
    (4, 6),
    (5, 7),
    (0, 4),
    (1, 5),
    (2, 6),
    (3, 7),
];

fn edge_axis(e: usize) -> usize {
    let (a, b) = EDGES[e];
    (a ^ b).trailing_zeros() as usize
}

fn edge_between(a: usize, b: usize) -> usize {
    let (lo, hi) = (a.min(b), a.max(b));
    EDGES.iter().position(|&e| e == (lo, hi)).expect("adjacent corners")
}

/// The six cell faces, each as four corners in counter-clockwise order seen
/// from outside the cell.
fn faces() -> Vec<[usize; 4]> {
    let mut out = Vec::new();
    for axis in 0..3 {
        let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
        for side in 0..2 {
            let corner = |du: usize, dv: usize| (side << axis) | (du << u) | (dv << v);
            let ccw = [corner(0, 0), corner(1, 0), corner(1, 1), corner(0, 1)];
            out.push(if side == 1 {
                ccw
            } else {
                [ccw[0], ccw[3], ccw[2], ccw[1]]
            });
        }
    }
    out
}

/// Triangles (as edge indices) for every corner-sign configuration.
///
/// On each face the sign changes are paired so that positive corners stay
/// separated, which depends only on the face's own corners and therefore
/// agrees between the two cells sharing it. The resulting segments chain
/// into closed loops that are fanned into triangles.
fn case_table() -> &'static Vec<Vec<[usize; 3]>> {
    static TABLE: OnceLock<Vec<Vec<[usize; 3]>>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let faces = faces();
        let mut table: Vec<Vec<[usize; 3]>> = (0..256).map(|case| triangulate(case, &faces)).collect();
        // orient so that normals face the positive corner in the single-corner case
        let probe = &table[1][0];
        let pts = probe.map(|e| {
            let (a, b) = EDGES[e];
            let pa = CORNERS[a].map(|c| c as f64);
            let pb = CORNERS[b].map(|c| c as f64);
            Vec3::new((pa[0] + pb[0]) / 2.0, (pa[1] + pb[1]) / 2.0, (pa[2] + pb[2]) / 2.0)
        });
        let normal = (pts[1] - pts[0]).cross(&(pts[2] - pts[0]));
        if normal.dot(&(Vec3::zeros() - pts[0])) < 0.0 {
            for tris in &mut table {
                for t in tris.iter_mut() {
                    t.swap(1, 2);
                }
            }
        }
        table
    })
}

fn triangulate(case: usize, faces: &[[usize; 4]]) -> Vec<[usize; 3]> {
    let positive = |c: usize| case & (1 << c) != 0;
    let mut next: HashMap<usize, usize> = HashMap::new();
    for face in faces {
        // crossing k lies between face[k] and face[k + 1]
        let crossing = |k: usize| positive(face[k]) != positive(face[(k + 1) % 4]);
        let entry = |k: usize| !positive(face[k]) && positive(face[(k + 1) % 4]);
        for k in 0..4 {
            if !crossing(k) || entry(k) {
                continue;
            }
            let mut j = (k + 3) % 4;
            while !(crossing(j) && entry(j)) {
                j = (j + 3) % 4;
            }
            let from = edge_between(face[j], face[(j + 1) % 4]);
            let to = edge_between(face[k], face[(k + 1) % 4]);
            next.insert(from, to);
        }
    }
    let mut tris = Vec::new();
    let mut starts: Vec<usize> = next.keys().copied().collect();
    starts.sort_unstable();
    let mut used = [false; 12];
    for s in starts {
        if used[s] {
            continue;
        }
        let mut lp = vec![s];
        used[s] = true;
        let mut cur = next[&s];
        while cur != s {
            used[cur] = true;
            lp.push(cur);
            cur = next[&cur];
        }
        for i in 1..lp.len() - 1 {
            tris.push([lp[0], lp[i], lp[i + 1]]);
        }
    }
    tris
}

/// Bounds of all back-projected depths, scaled by 1.05 about the center
/// and padded by `pad` on every side.
pub fn depth_bounds(depths: &[DepthMap], cameras: &[Camera], pad: f64) -> Option<Aabb> {
    let mut lo = Vec3::repeat(f64::INFINITY);
    let mut hi = Vec3::repeat(f64::NEG_INFINITY);
    let mut any = false;
    for (depth, cam) in depths.iter().zip(cameras) {
        for y in 0..depth.height {
            for x in 0..depth.width {
                let d = *depth.get(x, y);
                if d > 0.0 && d.is_finite() {
                    let p = cam.camera_to_world(&(cam.pixel_ray_xy(x as f64, y as f64) * d));
                    lo = lo.inf(&p);
                    hi = hi.sup(&p);
                    any = true;
                }
            }
        }
    }
    any.then(|| {
        let b = Aabb { min: lo, max: hi }.inflated(1.05);
        Aabb {
            min: b.min - Vec3::repeat(pad),
            max: b.max + Vec3::repeat(pad),
        }
    })
}

/// Integrates all depth maps into one volume and extracts its surface.
pub fn fuse_depth_maps(
    depths: &[DepthMap],
    cameras: &[Camera],
    voxel_size: f64,
    truncation: f64,
    min_weight: f64,
    bounds: Option<Aabb>,
) -> Result<TriangleMesh> {
    let bounds = match bounds {
        Some(b) => b,
        None => depth_bounds(depths, cameras, truncation + 2.0 * voxel_size).ok_or(Error::EmptySurface)?,
    };
    let mut volume = TsdfVolume::covering(&bounds, voxel_size, truncation)?;
    for (d, c) in depths.iter().zip(cameras) {
        volume.integrate(d, c)?;
    }
    volume.extract_mesh(min_weight)
}
