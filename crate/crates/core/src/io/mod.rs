//! File formats: PFM float maps, PLY meshes and point tables, PNG images.

pub mod pfm;
pub mod ply;
pub mod png;
