//! Posed multi-view datasets: COLMAP text ingestion and synthetic scenes.

mod colmap;
pub mod synthetic;

pub use colmap::{load_colmap, save_colmap};
pub use synthetic::{gen_synthetic, SceneKind, SyntheticSpec, Texture};

use crate::mesh::TriangleMesh;
use crate::{Camera, DepthMap, Error, NormalMap, Result, RgbImage, Vec3};

#[derive(Debug, Clone, PartialEq)]
pub struct View {
    pub name: String,
    pub image: RgbImage,
    pub camera: Camera,
    /// Camera-frame normal prior; zero vectors mark missing values.
    pub prior_normal: Option<NormalMap>,
    pub gt_depth: Option<DepthMap>,
    /// Camera-frame ground-truth normals.
    pub gt_normal: Option<NormalMap>,
}

impl View {
    /// File stem of the image name, used to key auxiliary maps.
    pub fn stem(&self) -> &str {
        std::path::Path::new(&self.name)
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or(&self.name)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub views: Vec<View>,
    pub points: Vec<Vec3>,
    pub point_colors: Vec<Vec3>,
    pub gt_mesh: Option<TriangleMesh>,
}

impl Dataset {
    pub fn cameras(&self) -> Vec<Camera> {
        self.views.iter().map(|v| v.camera.clone()).collect()
    }

    pub fn require_views(&self, needed: usize) -> Result<()> {
        if self.views.len() < needed {
            return Err(Error::TooFewViews {
                needed,
                got: self.views.len(),
            });
        }
        Ok(())
    }
}
