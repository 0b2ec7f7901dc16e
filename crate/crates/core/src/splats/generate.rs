use nalgebra::{Quaternion, UnitQuaternion};

use crate::camera::{backproject_pixel, camera_to_world, Camera};
use crate::error::{Error, Result};
use crate::raster::{same_dims, DepthMap, GuidanceImage, Mask};

use super::activation::{scale_activation, scale_magnitudes, ScaleActivationParams};
use super::geometry::{reparameterize_rotation, GaussianSplat, SplatFrame};

/// Per-pixel regressor outputs: camera-frame quaternion `(w, x, y, z)`,
/// three scale pre-activations and an opacity logit.
#[derive(Debug, Clone, PartialEq)]
pub struct PreactivationMap {
    width: usize,
    height: usize,
    values: Vec<[f64; 8]>,
}

impl PreactivationMap {
    pub fn new(width: usize, height: usize, values: Vec<[f64; 8]>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::DimensionMismatch {
                expected: (width, height),
                found: (values.len(), 1),
            });
        }
        if !values.iter().flatten().all(|v| v.is_finite()) {
            return Err(Error::InvalidInput("pre-activations must be finite".into()));
        }
        Ok(PreactivationMap { width, height, values })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn get(&self, x: usize, y: usize) -> [f64; 8] {
        self.values[y * self.width + x]
    }

    pub fn values(&self) -> &[[f64; 8]] {
        &self.values
    }

    /// Stand-in when no regressor output is available: identity rotation,
    /// scale pre-activations proportional to the pixel footprint, and a
    /// mostly opaque logit.
    pub fn procedural(depth: &DepthMap, cam: &Camera) -> Self {
        let (w, h) = depth.dims();
        let f = 0.5 * (cam.intrinsics.fx + cam.intrinsics.fy);
        let values = (0..w * h)
            .map(|i| {
                let d = depth.get(i % w, i / w).unwrap_or(0.0);
                let z = d / f * 100.0;
                [1.0, 0.0, 0.0, 0.0, z, z, 0.5 * z, 3.0]
            })
            .collect();
        PreactivationMap {
            width: w,
            height: h,
            values,
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// One splat per valid foreground pixel. Rotations are moved to the world
/// frame by premultiplying the camera-to-world rotation; scales go through
/// the instance-normalized activation over the whole frame.
pub fn splats_from_preactivations(
    depth: &DepthMap,
    color: &GuidanceImage,
    mask: &Mask,
    cam: &Camera,
    pre: &PreactivationMap,
    act: &ScaleActivationParams,
    frame_index: u64,
) -> Result<SplatFrame> {
    same_dims(depth.dims(), color.dims())?;
    same_dims(depth.dims(), mask.dims())?;
    same_dims(depth.dims(), pre.dims())?;
    act.validate()?;
    let (w, h) = depth.dims();
    let r_wc = cam.pose.quaternion();
    let mut pixels = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if let (true, Some(d)) = (mask.get(x, y), depth.get(x, y)) {
                pixels.push((x, y, d));
            }
        }
    }
    let z: Vec<[f64; 3]> = pixels
        .iter()
        .map(|&(x, y, _)| {
            let v = pre.get(x, y);
            [v[4], v[5], v[6]]
        })
        .collect();
    let scales = match z.len() {
        0 => Vec::new(),
        // a lone splat has no spread; its normalized value is taken as 0
        1 => vec![act.beta.map(|b| (act.s_max * b).abs())],
        _ => scale_magnitudes(&scale_activation(&z, act)?),
    };
    let mut splats = Vec::with_capacity(pixels.len());
    for (&(x, y, d), s) in pixels.iter().zip(&scales) {
        let v = pre.get(x, y);
        let q = Quaternion::new(v[0], v[1], v[2], v[3]);
        if !(q.norm() > 0.0) {
            return Err(Error::InvalidInput(format!("zero quaternion at pixel ({x},{y})")));
        }
        let rot = reparameterize_rotation(&UnitQuaternion::from_quaternion(q), &r_wc);
        let mu = camera_to_world(&backproject_pixel(x as f64, y as f64, d, &cam.intrinsics)?, &cam.pose);
        splats.push(GaussianSplat::new(
            mu,
            rot,
            (*s).into(),
            color.get(x, y),
            sigmoid(v[7]),
        )?);
    }
    Ok(SplatFrame {
        splats,
        source_camera: cam.id.clone(),
        frame_index,
    })
}
