//! Per-camera colored point clouds, radius outlier filtering and normals.

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rayon::prelude::*;

use crate::camera::{backproject_pixel, camera_to_world, Camera};
use crate::error::{Error, Result};
use crate::kdtree::KdTree;
use crate::raster::{same_dims, DepthMap, GuidanceImage, Mask};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    pub positions: Vec<Vector3<f64>>,
    pub colors: Vec<[f64; 3]>,
    /// Per-point unit normal; `None` where the neighborhood was degenerate.
    pub normals: Option<Vec<Option<Vector3<f64>>>>,
    pub source_camera: String,
}

impl PointCloud {
    pub fn new(positions: Vec<Vector3<f64>>, colors: Vec<[f64; 3]>, source_camera: impl Into<String>) -> Result<Self> {
        if positions.len() != colors.len() {
            return Err(Error::InvalidInput(format!(
                "{} positions but {} colors",
                positions.len(),
                colors.len()
            )));
        }
        if positions.iter().any(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::InvalidInput("point positions must be finite".into()));
        }
        Ok(PointCloud {
            positions,
            colors,
            normals: None,
            source_camera: source_camera.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Keeps the points whose flag is set, preserving order.
    pub fn select(&self, keep: &[bool]) -> PointCloud {
        let pick = |i: &usize| keep[*i];
        let idx: Vec<usize> = (0..self.len()).filter(pick).collect();
        PointCloud {
            positions: idx.iter().map(|&i| self.positions[i]).collect(),
            colors: idx.iter().map(|&i| self.colors[i]).collect(),
            normals: self
                .normals
                .as_ref()
                .map(|n| idx.iter().map(|&i| n[i]).collect()),
            source_camera: self.source_camera.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadiusFilterParams {
    pub radius: f64,
    pub min_neighbors: usize,
}

impl Default for RadiusFilterParams {
    fn default() -> Self {
        RadiusFilterParams {
            radius: 0.2,
            min_neighbors: 30,
        }
    }
}

impl RadiusFilterParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return Err(Error::InvalidInput(format!("radius must be positive, got {}", self.radius)));
        }
        if self.min_neighbors == 0 {
            return Err(Error::InvalidInput("min_neighbors must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalParams {
    pub radius: f64,
    pub max_nn: usize,
}

impl Default for NormalParams {
    fn default() -> Self {
        NormalParams {
            radius: 0.1,
            max_nn: 30,
        }
    }
}

/// Back-projects every valid foreground depth pixel into world space.
pub fn reconstruct_pointcloud(depth: &DepthMap, color: &GuidanceImage, mask: &Mask, cam: &Camera) -> Result<PointCloud> {
    same_dims(depth.dims(), color.dims())?;
    same_dims(depth.dims(), mask.dims())?;
    let (w, h) = depth.dims();
    let mut positions = Vec::new();
    let mut colors = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if !mask.get(x, y) {
                continue;
            }
            if let Some(d) = depth.get(x, y) {
                let pc = backproject_pixel(x as f64, y as f64, d, &cam.intrinsics)?;
                positions.push(camera_to_world(&pc, &cam.pose));
                colors.push(color.get(x, y));
            }
        }
    }
    PointCloud::new(positions, colors, cam.id.clone())
}

/// Keeps points with at least `min_neighbors` points (itself included)
/// strictly closer than `radius`.
pub fn radius_outlier_filter(cloud: &PointCloud, params: &RadiusFilterParams) -> Result<PointCloud> {
    params.validate()?;
    let tree = KdTree::build(&cloud.positions);
    let keep: Vec<bool> = cloud
        .positions
        .par_iter()
        .map(|p| tree.count_within(p, params.radius, params.min_neighbors) >= params.min_neighbors)
        .collect();
    Ok(cloud.select(&keep))
}

/// Neighborhood covariance (population, about the neighborhood mean).
fn covariance(points: &[Vector3<f64>]) -> Matrix3<f64> {
    let n = points.len() as f64;
    let mean = points.iter().fold(Vector3::zeros(), |a, p| a + p) / n;
    let mut c = Matrix3::zeros();
    for p in points {
        let d = p - mean;
        c += d * d.transpose();
    }
    c / n
}

/// Minor-axis eigenvector of a covariance, or `None` for rank < 2.
pub(crate) fn minor_axis(c: &Matrix3<f64>) -> Option<(Vector3<f64>, f64)> {
    let eig = SymmetricEigen::new(*c);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let l_max = eig.eigenvalues[order[2]];
    let l_mid = eig.eigenvalues[order[1]];
    if !(l_max > 0.0) || l_mid <= 1e-12 * l_max {
        return None;
    }
    let n = eig.eigenvectors.column(order[0]).into_owned();
    let norm = n.norm();
    if !(norm > 0.0) {
        return None;
    }
    Some((n / norm, eig.eigenvalues[order[0]]))
}

/// Normals from the up-to-`max_nn` nearest neighbors within `radius`
/// (the point itself included), oriented toward `viewpoint`.
pub fn estimate_normals(cloud: &PointCloud, params: &NormalParams, viewpoint: &Vector3<f64>) -> Result<PointCloud> {
    if !(params.radius > 0.0) || params.max_nn == 0 {
        return Err(Error::InvalidInput("normal radius and max_nn must be positive".into()));
    }
    let tree = KdTree::build(&cloud.positions);
    let normals: Vec<Option<Vector3<f64>>> = cloud
        .positions
        .par_iter()
        .map(|p| {
            let nn = tree.nearest_within(p, params.radius, params.max_nn);
            if nn.len() < 3 {
                return None;
            }
            let pts: Vec<Vector3<f64>> = nn.iter().map(|&(i, _)| cloud.positions[i]).collect();
            let (mut n, _) = minor_axis(&covariance(&pts))?;
            if (viewpoint - p).dot(&n) < 0.0 {
                n = -n;
            }
            Some(n)
        })
        .collect();
    let mut out = cloud.clone();
    out.normals = Some(normals);
    Ok(out)
}
