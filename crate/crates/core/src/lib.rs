//! Post-processing for calibrated multi-camera RGB-D capture: depth
//! cleaning, rectified stereo, colored point clouds, Gaussian splats,
//! binary packaging, software rendering and a retrying task pipeline.

pub mod camera;
pub mod codec;
pub mod depthproc;
pub mod error;
pub mod io;
pub mod kdtree;
pub mod numeric;
pub mod pipeline;
pub mod pointcloud;
pub mod raster;
pub mod render;
pub mod splats;
pub mod stereo;
pub mod synthetic;

pub use error::{Error, Result};
