//! Layered character model engine: rasterization and visibility, semantic
//! labeling, pseudo-depth and stratification, see-through layer export.

pub mod archive;
pub mod depth;
pub mod fixtures;
pub mod image;
pub mod labeler;
pub mod layers;
pub mod manifest;
pub mod metrics;
pub mod model;
pub mod pngio;
pub mod psd;
pub mod raster;
pub mod tensor;
