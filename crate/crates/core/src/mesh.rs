use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::Vec3;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[u32; 3]>,
}

impl TriangleMesh {
    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    /// Appends another mesh, offsetting its face indices.
    pub fn append(&mut self, other: &TriangleMesh) {
        let offset = self.vertices.len() as u32;
        self.vertices.extend_from_slice(&other.vertices);
        self.faces.extend(
            other
                .faces
                .iter()
                .map(|f| [f[0] + offset, f[1] + offset, f[2] + offset]),
        );
    }

    pub fn face_area(&self, face: &[u32; 3]) -> f64 {
        let [a, b, c] = face.map(|i| self.vertices[i as usize]);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    pub fn face_normal(&self, face: &[u32; 3]) -> Vec3 {
        let [a, b, c] = face.map(|i| self.vertices[i as usize]);
        (b - a).cross(&(c - a))
    }

    pub fn total_area(&self) -> f64 {
        self.faces.iter().map(|f| self.face_area(f)).sum()
    }

    /// Undirected edges with the number of faces using each one.
    pub fn edge_use_counts(&self) -> std::collections::HashMap<(u32, u32), usize> {
        let mut counts = std::collections::HashMap::new();
        for f in &self.faces {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                *counts.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        counts
    }

    /// Every edge is shared by exactly two faces.
    pub fn is_watertight(&self) -> bool {
        !self.faces.is_empty() && self.edge_use_counts().values().all(|&c| c == 2)
    }

    /// V - E + F over the vertices referenced by faces.
    pub fn euler_characteristic(&self) -> i64 {
        let mut used = vec![false; self.vertices.len()];
        for f in &self.faces {
            for &i in f {
                used[i as usize] = true;
            }
        }
        let v = used.iter().filter(|&&u| u).count() as i64;
        let e = self.edge_use_counts().len() as i64;
        v - e + self.faces.len() as i64
    }

    /// Area-weighted uniform surface samples, reproducible for a given seed.
    pub fn sample_points(&self, count: usize, seed: u64) -> Vec<Vec3> {
        let mut cumulative = Vec::with_capacity(self.faces.len());
        let mut total = 0.0;
        for f in &self.faces {
            total += self.face_area(f);
            cumulative.push(total);
        }
        if total <= 0.0 || count == 0 {
            return Vec::new();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|_| {
                let target = rng.gen::<f64>() * total;
                let idx = cumulative.partition_point(|&c| c < target).min(self.faces.len() - 1);
                let [a, b, c] = self.faces[idx].map(|i| self.vertices[i as usize]);
                let (mut u, mut v): (f64, f64) = (rng.gen(), rng.gen());
                if u + v > 1.0 {
                    u = 1.0 - u;
                    v = 1.0 - v;
                }
                a + (b - a) * u + (c - a) * v
            })
            .collect()
    }
}
