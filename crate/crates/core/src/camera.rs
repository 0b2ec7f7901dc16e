//! Pinhole cameras, rigid poses and the projection math shared by
//! reconstruction and rendering.
//!
//! Pixel centers sit at integer coordinates: pixel `(u, v)` is the sample at
//! exactly `(u, v)` on the image plane, with no half-pixel offset.

use std::collections::HashSet;
use std::fmt::Write as _;

use nalgebra::{Matrix2x3, Matrix3, Rotation3, UnitQuaternion, Vector3};

use crate::error::{Error, Result};

/// Orthonormality tolerance for rotations built in memory.
pub const ROTATION_TOLERANCE: f64 = 1e-9;

/// Looser tolerance for rotations read from text, which are re-orthonormalized
/// after the check.
pub const PARSED_ROTATION_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0 && fx.is_finite() && fy.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "focal lengths must be positive, got fx={fx} fy={fy}"
            )));
        }
        if !(cx.is_finite() && cy.is_finite()) {
            return Err(Error::InvalidInput("principal point must be finite".into()));
        }
        if width == 0 || height == 0 {
            return Err(Error::InvalidInput(format!(
                "image size must be at least 1x1, got {width}x{height}"
            )));
        }
        Ok(Intrinsics {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        })
    }

    /// `true` when `(u, v)` lies inside the sampled pixel grid.
    pub fn contains(&self, u: f64, v: f64) -> bool {
        u >= 0.0 && v >= 0.0 && u <= (self.width - 1) as f64 && v <= (self.height - 1) as f64
    }
}

/// Camera-to-world rigid transform: `x_world = rotation * x_cam + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

fn orthonormality_error(r: &Matrix3<f64>) -> f64 {
    let gram = r.transpose() * r - Matrix3::identity();
    gram.abs().max().max((r.determinant() - 1.0).abs())
}

impl Pose {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        Self::with_tolerance(rotation, translation, ROTATION_TOLERANCE)
    }

    fn with_tolerance(rotation: Matrix3<f64>, translation: Vector3<f64>, tol: f64) -> Result<Self> {
        if !rotation.iter().chain(translation.iter()).all(|v| v.is_finite()) {
            return Err(Error::InvalidInput("pose contains non-finite values".into()));
        }
        let err = orthonormality_error(&rotation);
        if err > tol {
            return Err(Error::InvalidInput(format!(
                "rotation is not orthonormal (error {err:.3e} > {tol:.0e})"
            )));
        }
        Ok(Pose {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Pose {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Pose {
            rotation: Matrix3::identity(),
            translation: t,
        }
    }

    pub fn from_rotation(rotation: Rotation3<f64>, translation: Vector3<f64>) -> Self {
        Pose {
            rotation: *rotation.matrix(),
            translation,
        }
    }

    /// Pose of a camera at `eye` whose optical axis (+z) points at `target`,
    /// with image +y pointing along `-up` (x right, y down, z forward).
    pub fn look_at(eye: Vector3<f64>, target: Vector3<f64>, up: Vector3<f64>) -> Result<Self> {
        let z = target - eye;
        if z.norm() < 1e-12 {
            return Err(Error::InvalidGeometry("look_at target equals eye".into()));
        }
        let z = z.normalize();
        let x = z.cross(&up);
        if x.norm() < 1e-12 {
            return Err(Error::InvalidGeometry("look_at up vector parallel to view direction".into()));
        }
        let x = x.normalize();
        let y = z.cross(&x);
        let rotation = Matrix3::from_columns(&[x, y, z]);
        Pose::new(rotation, eye)
    }

    /// Projects an almost-orthonormal matrix onto SO(3) via its polar factor.
    pub fn reorthonormalized(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let svd = rotation.svd(true, true);
        let (u, v_t) = match (svd.u, svd.v_t) {
            (Some(u), Some(v_t)) => (u, v_t),
            _ => return Err(Error::InvalidInput("rotation SVD failed".into())),
        };
        let mut r = u * v_t;
        if r.determinant() < 0.0 {
            let mut u = u;
            u.column_mut(2).neg_mut();
            r = u * v_t;
        }
        Pose::new(r, translation)
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn quaternion(&self) -> UnitQuaternion<f64> {
        UnitQuaternion::from_matrix(&self.rotation)
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Maps a world point into this camera's frame.
    pub fn world_to_camera(&self, p_world: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.transpose() * (p_world - self.translation)
    }

    pub fn orthonormality_error(&self) -> f64 {
        orthonormality_error(&self.rotation)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub id: String,
    pub intrinsics: Intrinsics,
    pub pose: Pose,
}

impl Camera {
    pub fn new(id: impl Into<String>, intrinsics: Intrinsics, pose: Pose) -> Self {
        Camera {
            id: id.into(),
            intrinsics,
            pose,
        }
    }

    /// Optical center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        self.pose.translation
    }
}

/// Camera-space point of pixel `(u, v)` at depth `d`.
pub fn backproject_pixel(u: f64, v: f64, d: f64, k: &Intrinsics) -> Result<Vector3<f64>> {
    if !(d > 0.0 && d.is_finite()) {
        return Err(Error::InvalidInput(format!("depth must be positive, got {d}")));
    }
    Ok(Vector3::new((u - k.cx) / k.fx * d, (v - k.cy) / k.fy * d, d))
}

pub fn camera_to_world(p: &Vector3<f64>, pose: &Pose) -> Vector3<f64> {
    pose.rotation * p + pose.translation
}

/// Pixel coordinates and camera-space depth of a world point.
pub fn project_point(p_world: &Vector3<f64>, cam: &Camera) -> Result<(f64, f64, f64)> {
    let p = cam.pose.world_to_camera(p_world);
    project_camera_point(&p, &cam.intrinsics)
}

pub fn project_camera_point(p: &Vector3<f64>, k: &Intrinsics) -> Result<(f64, f64, f64)> {
    if !(p.z > 0.0) {
        return Err(Error::InvalidGeometry(format!(
            "point is behind the camera (z = {})",
            p.z
        )));
    }
    Ok((k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy, p.z))
}

/// Jacobian of the pinhole projection with respect to the camera-space point.
pub fn projection_jacobian(p_cam: &Vector3<f64>, k: &Intrinsics) -> Result<Matrix2x3<f64>> {
    let z = p_cam.z;
    if !(z > 0.0) {
        return Err(Error::InvalidGeometry(format!(
            "jacobian undefined for z = {z}"
        )));
    }
    let z2 = z * z;
    Ok(Matrix2x3::new(
        k.fx / z,
        0.0,
        -k.fx * p_cam.x / z2,
        0.0,
        k.fy / z,
        -k.fy * p_cam.y / z2,
    ))
}

/// An ordered set of calibrated cameras with unique ids.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Rig {
    cameras: Vec<Camera>,
}

impl Rig {
    pub fn new(cameras: Vec<Camera>) -> Result<Self> {
        let mut seen = HashSet::new();
        for cam in &cameras {
            if cam.id.is_empty() || cam.id.chars().any(char::is_whitespace) {
                return Err(Error::InvalidInput(format!(
                    "camera id {:?} must be non-empty without whitespace",
                    cam.id
                )));
            }
            if !seen.insert(cam.id.as_str()) {
                return Err(Error::InvalidInput(format!("duplicate camera id {:?}", cam.id)));
            }
        }
        Ok(Rig { cameras })
    }

    pub fn cameras(&self) -> &[Camera] {
        &self.cameras
    }

    pub fn len(&self) -> usize {
        self.cameras.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cameras.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Camera> {
        self.cameras.iter().find(|c| c.id == id)
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.cameras.iter().position(|c| c.id == id)
    }

    /// Parses the whitespace-separated rig format: per camera
    /// `id fx fy cx cy width height` followed by the 12 row-major entries of
    /// the 3x4 camera-to-world matrix. `#` starts a comment. Records may span
    /// lines.
    pub fn parse(text: &str) -> Result<Self> {
        let mut tokens = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("");
            tokens.extend(line.split_whitespace().map(|t| (lineno + 1, t)));
        }
        const FIELDS: usize = 19;
        if tokens.len() % FIELDS != 0 {
            let line = tokens.last().map(|t| t.0).unwrap_or(1);
            return Err(Error::Parse {
                line,
                msg: format!(
                    "expected records of {FIELDS} fields, found {} trailing tokens",
                    tokens.len() % FIELDS
                ),
            });
        }
        let mut cameras = Vec::new();
        for rec in tokens.chunks(FIELDS) {
            let line = rec[0].0;
            let num = |i: usize| -> Result<f64> {
                rec[i].1.parse::<f64>().map_err(|_| Error::Parse {
                    line: rec[i].0,
                    msg: format!("expected a number, found {:?}", rec[i].1),
                })
            };
            let int = |i: usize| -> Result<usize> {
                rec[i].1.parse::<usize>().map_err(|_| Error::Parse {
                    line: rec[i].0,
                    msg: format!("expected a pixel count, found {:?}", rec[i].1),
                })
            };
            let wrap = |e: Error| Error::Parse {
                line,
                msg: e.to_string(),
            };
            let k = Intrinsics::new(num(1)?, num(2)?, num(3)?, num(4)?, int(5)?, int(6)?)
                .map_err(wrap)?;
            let mut m = [0.0; 12];
            for (j, slot) in m.iter_mut().enumerate() {
                *slot = num(7 + j)?;
            }
            let rotation = Matrix3::new(m[0], m[1], m[2], m[4], m[5], m[6], m[8], m[9], m[10]);
            let translation = Vector3::new(m[3], m[7], m[11]);
            Pose::with_tolerance(rotation, translation, PARSED_ROTATION_TOLERANCE).map_err(wrap)?;
            let pose = Pose::reorthonormalized(rotation, translation).map_err(wrap)?;
            cameras.push(Camera::new(rec[0].1, k, pose));
        }
        Rig::new(cameras)
    }

    /// Serializes with round-trip float formatting, one camera per line.
    pub fn to_text(&self) -> String {
        let mut out = String::from("# id fx fy cx cy width height r00 r01 r02 tx r10 r11 r12 ty r20 r21 r22 tz\n");
        for cam in &self.cameras {
            let k = &cam.intrinsics;
            let r = cam.pose.rotation();
            let t = cam.pose.translation();
            let _ = write!(
                out,
                "{} {:?} {:?} {:?} {:?} {} {}",
                cam.id, k.fx, k.fy, k.cx, k.cy, k.width, k.height
            );
            for row in 0..3 {
                let _ = write!(out, " {:?} {:?} {:?} {:?}", r[(row, 0)], r[(row, 1)], r[(row, 2)], t[row]);
            }
            out.push('\n');
        }
        out
    }
}
