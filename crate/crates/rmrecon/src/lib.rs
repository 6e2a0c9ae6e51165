//! Multi-view 3D reconstruction of textureless, non-Lambertian objects
//! from posed HDR images under unknown illumination.
//!
//! The pipeline alternates two estimates until they agree: per-view
//! camera-space reflectance maps (radiance as a function of surface
//! normal) and a single signed-distance-field geometry shared by all
//! views. Reflectance maps are estimated by confidence-weighted mapping
//! of observed radiance over the normal hemisphere; geometry is updated
//! by rendering the current surface, comparing its normals against
//! per-pixel shape-from-shading estimates, and propagating the error to
//! the SDF coefficients through the level-set chain rule.
//!
//! Modules follow the data flow:
//! - [`imaging`]: HDR buffers, masks, cameras, scene I/O
//! - [`sdfgrid`]: B-spline SDF, visual hull, mesh extraction
//! - [`rasterizer`]: deterministic G-buffers and normal-to-vertex gradients
//! - [`levelset`]: SfS loss, SDF chain rule, Adam, hull clamping
//! - [`rmap`]: reflectance-map estimation, synthesis oracle, losses
//! - [`sfs`]: per-pixel normal estimation from image + reflectance map
//! - [`pipeline`]: synthetic scenes, the reconstruction loop, metrics

pub mod error;
pub mod imaging;
pub mod levelset;
pub mod pipeline;
pub mod rasterizer;
pub mod rmap;

pub mod sdfgrid;
pub mod sfs;


pub use error::{Error, Result};
