//! Multi-view surface reconstruction with flattened Gaussian surfels.
//!
//! The crate renders a surfel scene into color, depth and normal maps,
//! refines the rendered geometry with a patch-match stereo engine, uses the
//! verified depths and external normal priors as supervision, and finally
//! fuses rendered depth maps into a TSDF volume from which a triangle mesh
//! is extracted.

pub mod dataset;
pub mod error;
pub mod fusion;
pub mod geometry;
pub mod io;
pub mod losses;
pub mod maps;
pub mod mesh;
pub mod metrics;
pub mod optim;
pub mod patchmatch;
pub mod pipeline;
pub mod renderer;
pub mod scene;
pub mod ssim;

pub use error::{Error, Result};
pub use geometry::{Camera, PlaneHypothesis};
pub use maps::{DepthMap, GrayImage, Map, NormalMap, RgbImage};

pub type Vec2 = nalgebra::Vector2<f64>;
pub type Vec3 = nalgebra::Vector3<f64>;
pub type Mat3 = nalgebra::Matrix3<f64>;
