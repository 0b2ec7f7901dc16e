//! Session manifest: a JSON document next to the media files it lists.
//!
//! ```json
//! {
//!   "mode": "offline",
//!   "depth_source": "sensor",
//!   "rig": "rig.txt",
//!   "cameras": [
//!     { "id": "cam0", "frames": [
//!       { "timestamp_us": 0, "color": "cam0/color_00000.png",
//!         "depth": "cam0/depth_00000.png", "mask": "cam0/mask_00000.png",
//!         "flow": "cam0/flow_00000.flo", "preactivation": null } ] }
//!   ],
//!   "imu": [ { "timestamp_us": 0, "angular_accel": [0, 0, 0], "linear_accel": [0, 0, 0] } ]
//! }
//! ```
//!
//! Paths are relative to the manifest. `flow` on frame `t` is the backward
//! flow from `t` to the camera's previous frame. `depth` is required when
//! the depth source is `sensor`.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::camera::Rig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Spatial filtering only.
    Online,
    /// Spatiotemporal filtering where flow is available.
    #[default]
    Offline,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DepthSource {
    #[default]
    Sensor,
    /// RGB only: depth comes from adjacent stereo pairs.
    Stereo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameRecord {
    pub timestamp_us: i64,
    pub color: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth: Option<PathBuf>,
    pub mask: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flow: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preactivation: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraRecord {
    pub id: String,
    pub frames: Vec<FrameRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImuSample {
    pub timestamp_us: i64,
    /// rad/s²
    pub angular_accel: [f64; 3],
    /// m/s², gravity removed
    pub linear_accel: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    #[serde(default)]
    pub mode: Mode,
    #[serde(default)]
    pub depth_source: DepthSource,
    pub rig: PathBuf,
    pub cameras: Vec<CameraRecord>,
    #[serde(default)]
    pub imu: Vec<ImuSample>,
    /// Free-form capture notes carried through untouched.
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub metadata: serde_json::Value,
}

/// A validated manifest with its rig and base directory.
#[derive(Debug, Clone)]
pub struct Session {
    pub manifest: Manifest,
    pub base_dir: PathBuf,
    pub rig: Rig,
}

impl Session {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let manifest: Manifest = serde_json::from_str(&text)?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Session::from_manifest(manifest, base_dir)
    }

    pub fn from_manifest(manifest: Manifest, base_dir: PathBuf) -> Result<Self> {
        let rig_path = base_dir.join(&manifest.rig);
        let rig_text = std::fs::read_to_string(&rig_path).map_err(|e| Error::io(&rig_path, e))?;
        let rig = Rig::parse(&rig_text)?;
        validate(&manifest, &rig)?;
        Ok(Session { manifest, base_dir, rig })
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        self.base_dir.join(p)
    }

    /// Camera records in rig order.
    pub fn cameras(&self) -> &[CameraRecord] {
        &self.manifest.cameras
    }
}

/// Checks ids against the rig, timestamp order and required paths. All
/// problems are reported together.
pub fn validate(m: &Manifest, rig: &Rig) -> Result<()> {
    let mut problems = Vec::new();
    if m.cameras.is_empty() {
        problems.push("manifest lists no cameras".to_string());
    }
    let mut seen = HashSet::new();
    for (i, c) in m.cameras.iter().enumerate() {
        if !seen.insert(c.id.as_str()) {
            problems.push(format!("camera {} listed twice", c.id));
        }
        match rig.index_of(&c.id) {
            None => problems.push(format!("camera {} is not in the rig", c.id)),
            Some(j) if j != i => problems.push(format!("camera {} is listed out of rig order", c.id)),
            _ => {}
        }
        for (j, w) in c.frames.windows(2).enumerate() {
            if w[1].timestamp_us <= w[0].timestamp_us {
                problems.push(format!("camera {}: timestamps not strictly increasing at frame {}", c.id, j + 1));
            }
        }
        if m.depth_source == DepthSource::Sensor {
            for (j, f) in c.frames.iter().enumerate() {
                if f.depth.is_none() {
                    problems.push(format!("camera {}: frame {j} has no depth path", c.id));
                }
            }
        }
    }
    if m.cameras.len() != rig.len() && problems.is_empty() {
        problems.push(format!("rig has {} cameras but the manifest lists {}", rig.len(), m.cameras.len()));
    }
    if m.imu.iter().any(|s| !s.angular_accel.iter().chain(&s.linear_accel).all(|v| v.is_finite())) {
        problems.push("IMU samples must be finite".into());
    }
    if problems.is_empty() {
        Ok(())
    } else {
        Err(Error::InvalidInput(problems.join("; ")))
    }
}
