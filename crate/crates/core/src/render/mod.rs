//! Software rendering of splats and point clouds, and the virtual camera
//! path with its source-camera selection policy.

mod image;
mod path;
mod points;
mod splat;

pub use image::{quantize, RenderImage};
pub use path::{bezier_point, select_along_path, select_source_camera, BezierPath, SelectionMode, SourceSelection};
pub use points::render_pointcloud;
pub use splat::{
    project_gaussian, project_splat, rasterize_gaussians, rasterize_splats, RenderSettings, ScreenSplat, WorldGaussian,
};
