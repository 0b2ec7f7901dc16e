use nalgebra::Vector3;

use crate::camera::{Pose, Rig};
use crate::error::{Error, Result};

/// Cubic Bézier curve for the virtual camera.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BezierPath {
    pub control: [Vector3<f64>; 4],
}

impl BezierPath {
    pub fn new(control: [Vector3<f64>; 4]) -> Result<Self> {
        if !control.iter().all(|p| p.iter().all(|c| c.is_finite())) {
            return Err(Error::InvalidInput("control points must be finite".into()));
        }
        Ok(BezierPath { control })
    }

    /// Twelve whitespace-separated numbers: P0 through P3.
    pub fn parse(text: &str) -> Result<Self> {
        let nums: Vec<f64> = text
            .lines()
            .map(|l| l.split('#').next().unwrap_or(""))
            .flat_map(str::split_whitespace)
            .map(|t| t.parse::<f64>().map_err(|e| Error::InvalidInput(format!("bad path value {t:?}: {e}"))))
            .collect::<Result<_>>()?;
        if nums.len() != 12 {
            return Err(Error::InvalidInput(format!("path needs 12 numbers, found {}", nums.len())));
        }
        let p = |i: usize| Vector3::new(nums[3 * i], nums[3 * i + 1], nums[3 * i + 2]);
        BezierPath::new([p(0), p(1), p(2), p(3)])
    }

    /// `n ≥ 2` points evenly spaced in the curve parameter.
    pub fn sample(&self, n: usize) -> Vec<Vector3<f64>> {
        match n {
            0 => Vec::new(),
            1 => vec![bezier_point(0.0, self)],
            _ => (0..n).map(|i| bezier_point(i as f64 / (n - 1) as f64, self)).collect(),
        }
    }

    /// Sampled virtual poses looking at `target`.
    pub fn poses(&self, n: usize, target: &Vector3<f64>, up: &Vector3<f64>) -> Result<Vec<Pose>> {
        self.sample(n).into_iter().map(|p| Pose::look_at(p, *target, *up)).collect()
    }
}

pub fn bezier_point(t: f64, path: &BezierPath) -> Vector3<f64> {
    let t = if (0.0..=1.0).contains(&t) {
        t
    } else {
        log::warn!("bezier parameter {t} outside [0, 1], clamping");
        if t.is_nan() {
            0.0
        } else {
            t.clamp(0.0, 1.0)
        }
    };
    let [p0, p1, p2, p3] = path.control;
    let s = 1.0 - t;
    p0 * (s * s * s) + p1 * (3.0 * s * s * t) + p2 * (3.0 * s * t * t) + p3 * (t * t * t)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectionMode {
    /// One cloud per physical camera.
    Sensor,
    /// One cloud per adjacent camera pair.
    Stereo,
}

/// Displayed source, as rig indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SourceSelection {
    Camera(usize),
    Pair(usize, usize),
}

fn nearest_camera(position: &Vector3<f64>, rig: &Rig) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, c) in rig.cameras().iter().enumerate() {
        let d = (c.center() - position).norm_squared();
        // near-equal distances count as ties and keep the earlier camera
        if d < best_d * (1.0 - 1e-12) {
            best = i;
            best_d = d;
        }
    }
    best
}

fn pair_from(k: usize, after: bool, n: usize) -> SourceSelection {
    if n < 2 {
        return SourceSelection::Camera(0);
    }
    let first = if after { k } else { k.saturating_sub(1) };
    let first = first.min(n - 2);
    SourceSelection::Pair(first, first + 1)
}

/// Source for a single virtual pose. In stereo mode the side of the
/// nearest camera `k` is judged along the rig tangent at `k`: before it the
/// pair `(k-1, k)` is shown, from it onward `(k, k+1)`.
pub fn select_source_camera(virtual_pose: &Pose, rig: &Rig, mode: SelectionMode) -> Result<SourceSelection> {
    if rig.is_empty() {
        return Err(Error::InvalidInput("rig has no cameras".into()));
    }
    let pos = virtual_pose.translation();
    let k = nearest_camera(pos, rig);
    match mode {
        SelectionMode::Sensor => Ok(SourceSelection::Camera(k)),
        SelectionMode::Stereo => {
            let cams = rig.cameras();
            let n = cams.len();
            let prev = cams[k.saturating_sub(1)].center();
            let next = cams[(k + 1).min(n - 1)].center();
            let tangent = next - prev;
            let after = (pos - cams[k].center()).dot(&tangent) >= 0.0;
            Ok(pair_from(k, after, n))
        }
    }
}

/// Sources along a sampled path. In stereo mode the pair switches from
/// `(k-1, k)` to `(k, k+1)` at the sample closest to camera `k`.
pub fn select_along_path(poses: &[Pose], rig: &Rig, mode: SelectionMode) -> Result<Vec<SourceSelection>> {
    if rig.is_empty() {
        return Err(Error::InvalidInput("rig has no cameras".into()));
    }
    let positions: Vec<Vector3<f64>> = poses.iter().map(|p| *p.translation()).collect();
    let nearest: Vec<usize> = positions.iter().map(|p| nearest_camera(p, rig)).collect();
    if mode == SelectionMode::Sensor {
        return Ok(nearest.into_iter().map(SourceSelection::Camera).collect());
    }
    let closest: Vec<usize> = rig
        .cameras()
        .iter()
        .map(|c| {
            let mut best = (0, f64::INFINITY);
            for (j, p) in positions.iter().enumerate() {
                let d = (c.center() - p).norm_squared();
                if d < best.1 {
                    best = (j, d);
                }
            }
            best.0
        })
        .collect();
    Ok(nearest
        .iter()
        .enumerate()
        .map(|(j, &k)| pair_from(k, j >= closest[k], rig.len()))
        .collect())
}
