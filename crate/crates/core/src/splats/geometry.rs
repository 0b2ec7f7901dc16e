use nalgebra::{Matrix3, UnitQuaternion, Vector3};

use crate::error::{Error, Result};

/// One anisotropic Gaussian primitive in world space.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSplat {
    pub mu: Vector3<f64>,
    pub rot: UnitQuaternion<f64>,
    pub scales: Vector3<f64>,
    pub color: [f64; 3],
    pub opacity: f64,
}

impl GaussianSplat {
    pub fn new(
        mu: Vector3<f64>,
        rot: UnitQuaternion<f64>,
        scales: Vector3<f64>,
        color: [f64; 3],
        opacity: f64,
    ) -> Result<Self> {
        if !mu.iter().all(|c| c.is_finite()) {
            return Err(Error::InvalidInput("splat mean must be finite".into()));
        }
        if !scales.iter().all(|s| s.is_finite() && *s >= 0.0) {
            return Err(Error::InvalidInput(format!("splat scales must be non-negative, got {scales:?}")));
        }
        if !color.iter().all(|c| (0.0..=1.0).contains(c)) {
            return Err(Error::InvalidInput(format!("splat color out of range: {color:?}")));
        }
        if !(0.0..=1.0).contains(&opacity) {
            return Err(Error::InvalidInput(format!("opacity out of range: {opacity}")));
        }
        if ((rot.quaternion().norm() - 1.0).abs() > 1e-6) || !rot.coords.iter().all(|c| c.is_finite()) {
            return Err(Error::InvalidInput("splat rotation must be a unit quaternion".into()));
        }
        Ok(GaussianSplat {
            mu,
            rot,
            scales,
            color,
            opacity,
        })
    }

    pub fn covariance(&self) -> Matrix3<f64> {
        assemble_covariance(&self.rot, &self.scales)
    }
}

/// The splats regressed from one camera at one frame.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SplatFrame {
    pub splats: Vec<GaussianSplat>,
    pub source_camera: String,
    pub frame_index: u64,
}

/// `R diag(s²) Rᵀ`, formed as `M Mᵀ` with `M = R diag(s)` so the result is
/// exactly symmetric.
pub fn assemble_covariance(rot: &UnitQuaternion<f64>, scales: &Vector3<f64>) -> Matrix3<f64> {
    let m = rot.to_rotation_matrix().into_inner() * Matrix3::from_diagonal(scales);
    m * m.transpose()
}

/// World-frame splat rotation: the camera-to-world rotation premultiplies
/// the camera-frame prediction.
pub fn reparameterize_rotation(
    rot_cam_frame: &UnitQuaternion<f64>,
    cam_pose_rot: &UnitQuaternion<f64>,
) -> UnitQuaternion<f64> {
    cam_pose_rot * rot_cam_frame
}

/// `R Σ Rᵀ` for a covariance expressed in the camera frame.
pub fn world_covariance_from_camera(cov_cam: &Matrix3<f64>, cam_pose_rot: &Matrix3<f64>) -> Matrix3<f64> {
    let w = cam_pose_rot * cov_cam * cam_pose_rot.transpose();
    (w + w.transpose()) * 0.5
}
