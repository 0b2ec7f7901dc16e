//! Seeded synthetic capture sessions: a textured sphere drifting in front of
//! a calibrated rig, ray-cast to exact color, depth, mask and backward flow.
//! Used by the tests, the benchmarks and `volcap synth`.

use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::camera::{Camera, Intrinsics, Pose, Rig};
use crate::error::Result;
use crate::io;
use crate::pipeline::{CameraRecord, DepthSource, FrameRecord, ImuSample, Manifest, Mode};
use crate::raster::{DepthMap, FlowField, GuidanceImage, Mask};

pub const FRAME_INTERVAL_US: i64 = 33_333;
pub const SENSOR_RIG_RADIUS: f64 = 2.5;
pub const STEREO_BASELINE: f64 = 0.9;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub cameras: usize,
    pub frames: usize,
    pub width: usize,
    pub height: usize,
    pub source: DepthSource,
    pub mode: Mode,
    pub seed: u64,
    /// Depth noise standard deviation per meter of depth.
    pub depth_noise: f64,
    /// Fraction of foreground depths replaced by far outliers.
    pub outlier_fraction: f64,
    /// Constant timestamp offset per camera; missing entries are zero.
    pub offsets_us: Vec<i64>,
    /// Uniform timestamp jitter amplitude.
    pub jitter_us: i64,
    /// Angular acceleration spike `(frame, rad/s²)` added to the IMU log.
    pub imu_spike: Option<(usize, f64)>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            cameras: 4,
            frames: 8,
            width: 64,
            height: 48,
            source: DepthSource::Sensor,
            mode: Mode::Offline,
            seed: 7,
            depth_noise: 0.002,
            outlier_fraction: 0.002,
            offsets_us: Vec::new(),
            jitter_us: 0,
            imu_spike: None,
        }
    }
}

/// The moving object: a sphere with a texture fixed to its body.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scene {
    pub radius: f64,
}

impl Default for Scene {
    fn default() -> Self {
        Scene { radius: 0.45 }
    }
}

impl Scene {
    pub fn center(&self, frame: usize) -> Vector3<f64> {
        let t = frame as f64 / 30.0;
        let w = std::f64::consts::TAU / 3.0;
        Vector3::new(0.15 * (w * t).sin(), 0.05 * (w * t).cos(), 0.0)
    }

    pub fn texture(&self, local: &Vector3<f64>) -> [f64; 3] {
        let s = 1.0 / self.radius;
        let (x, y, z) = (local.x * s, local.y * s, local.z * s);
        [
            0.5 + 0.4 * (9.0 * x + 5.0 * y).sin(),
            0.5 + 0.4 * (11.0 * y - 6.0 * z).sin(),
            0.5 + 0.4 * (8.0 * z + 7.0 * x).cos(),
        ]
    }

    fn background(dir: &Vector3<f64>) -> [f64; 3] {
        let a = ((dir.x * 40.0).floor() + (dir.y * 40.0).floor()) as i64;
        let v = if a.rem_euclid(2) == 0 { 0.12 } else { 0.2 };
        [v, v, v * 1.2]
    }

    /// Nearest ray-sphere hit parameter along a unit direction.
    fn hit(&self, origin: &Vector3<f64>, dir: &Vector3<f64>, center: &Vector3<f64>) -> Option<f64> {
        let oc = origin - center;
        let b = oc.dot(dir);
        let c = oc.norm_squared() - self.radius * self.radius;
        let disc = b * b - c;
        if disc < 0.0 {
            return None;
        }
        let t = -b - disc.sqrt();
        (t > 0.0).then_some(t)
    }
}

/// Exact render of one view: color, true depth, silhouette and the backward
/// flow to the previous frame.
#[derive(Debug, Clone)]
pub struct View {
    pub color: GuidanceImage,
    pub depth: DepthMap,
    pub mask: Mask,
    pub flow: FlowField,
}

pub fn render_view(scene: &Scene, cam: &Camera, frame: usize) -> View {
    let k = &cam.intrinsics;
    let (w, h) = (k.width, k.height);
    let center = scene.center(frame);
    let prev_center = scene.center(frame.saturating_sub(1));
    let origin = cam.center();
    let r = cam.pose.rotation();
    let mut color = Vec::with_capacity(w * h);
    let mut depth = DepthMap::invalid(w, h);
    let mut mask = vec![false; w * h];
    let mut flow = vec![[0.0; 2]; w * h];
    for y in 0..h {
        for x in 0..w {
            let ray_cam = Vector3::new((x as f64 - k.cx) / k.fx, (y as f64 - k.cy) / k.fy, 1.0);
            let dir = (r * ray_cam).normalize();
            match scene.hit(&origin, &dir, &center) {
                Some(t) => {
                    let p = origin + dir * t;
                    let local = p - center;
                    color.push(scene.texture(&local));
                    depth.set(x, y, cam.pose.world_to_camera(&p).z);
                    mask[y * w + x] = true;
                    let before = cam.pose.world_to_camera(&(prev_center + local));
                    let u = k.fx * before.x / before.z + k.cx;
                    let v = k.fy * before.y / before.z + k.cy;
                    flow[y * w + x] = [u - x as f64, v - y as f64];
                }
                None => color.push(Scene::background(&dir)),
            }
        }
    }
    View {
        color: GuidanceImage::new(w, h, color).expect("sized"),
        depth,
        mask: Mask::new(w, h, mask).expect("sized"),
        flow: FlowField::new(w, h, flow).expect("sized"),
    }
}

/// Cameras on a horizontal arc around the origin, all aimed at it.
pub fn sensor_rig(n: usize, width: usize, height: usize) -> Result<Rig> {
    let f = 0.9 * width as f64;
    let k = Intrinsics::new(f, f, (width - 1) as f64 / 2.0, (height - 1) as f64 / 2.0, width, height)?;
    let span = std::f64::consts::FRAC_PI_3 * 2.0;
    let cams = (0..n)
        .map(|i| {
            let a = if n > 1 { -span / 2.0 + span * i as f64 / (n - 1) as f64 } else { 0.0 };
            let eye = Vector3::new(SENSOR_RIG_RADIUS * a.sin(), 0.0, -SENSOR_RIG_RADIUS * a.cos());
            let pose = Pose::look_at(eye, Vector3::zeros(), Vector3::y())?;
            Ok(Camera::new(format!("cam{i}"), k, pose))
        })
        .collect::<Result<Vec<_>>>()?;
    Rig::new(cams)
}

/// Parallel cameras on a line with the stereo baseline, focal length at half
/// the image width.
pub fn stereo_rig(n: usize, width: usize, height: usize) -> Result<Rig> {
    let f = width as f64 / 2.0;
    let k = Intrinsics::new(f, f, (width - 1) as f64 / 2.0, (height - 1) as f64 / 2.0, width, height)?;
    let cams = (0..n)
        .map(|i| {
            let x = (i as f64 - (n - 1) as f64 / 2.0) * STEREO_BASELINE;
            let pose = Pose::look_at(
                Vector3::new(x, 0.0, -SENSOR_RIG_RADIUS),
                Vector3::new(x, 0.0, 0.0),
                Vector3::y(),
            )?;
            Ok(Camera::new(format!("cam{i}"), k, pose))
        })
        .collect::<Result<Vec<_>>>()?;
    Rig::new(cams)
}

/// Sensor-style corruption: depth-proportional Gaussian noise and sparse
/// far outliers on the foreground.
pub fn corrupt_depth(depth: &DepthMap, noise: f64, outliers: f64, rng: &mut impl Rng) -> DepthMap {
    let mut out = depth.clone();
    let unit = Normal::new(0.0, 1.0).expect("valid");
    for y in 0..depth.height() {
        for x in 0..depth.width() {
            if let Some(d) = depth.get(x, y) {
                let v = if rng.random::<f64>() < outliers {
                    d + rng.random_range(0.5..1.5)
                } else {
                    d + noise * d * unit.sample(rng)
                };
                out.set(x, y, v.max(1e-3));
            }
        }
    }
    out
}

/// Writes a complete session (rig, media, manifest) under `dir` and returns
/// the manifest path.
pub fn write_session(dir: &Path, cfg: &SynthConfig) -> Result<PathBuf> {
    let rig = match cfg.source {
        DepthSource::Sensor => sensor_rig(cfg.cameras, cfg.width, cfg.height)?,
        DepthSource::Stereo => stereo_rig(cfg.cameras, cfg.width, cfg.height)?,
    };
    io::write_atomic(&dir.join("rig.txt"), rig.to_text().as_bytes())?;
    let scene = Scene::default();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut cameras = Vec::with_capacity(rig.len());
    for (ci, cam) in rig.cameras().iter().enumerate() {
        let offset = cfg.offsets_us.get(ci).copied().unwrap_or(0);
        let mut frames = Vec::with_capacity(cfg.frames);
        for fi in 0..cfg.frames {
            let view = render_view(&scene, cam, fi);
            let rel = |name: &str| PathBuf::from(&cam.id).join(format!("{name}_{fi:05}"));
            let color = rel("color").with_extension("png");
            let mask = rel("mask").with_extension("png");
            io::write_color_png(&dir.join(&color), &view.color)?;
            io::write_mask_png(&dir.join(&mask), &view.mask)?;
            let depth = match cfg.source {
                DepthSource::Sensor => {
                    let p = rel("depth").with_extension("png");
                    let noisy = corrupt_depth(&view.depth, cfg.depth_noise, cfg.outlier_fraction, &mut rng);
                    io::write_depth_png(&dir.join(&p), &noisy)?;
                    Some(p)
                }
                DepthSource::Stereo => None,
            };
            let flow = if cfg.source == DepthSource::Sensor && fi > 0 {
                let p = rel("flow").with_extension("flo");
                io::write_flo(&dir.join(&p), &view.flow)?;
                Some(p)
            } else {
                None
            };
            let jitter = if cfg.jitter_us > 0 {
                rng.random_range(-cfg.jitter_us..=cfg.jitter_us)
            } else {
                0
            };
            frames.push(FrameRecord {
                timestamp_us: fi as i64 * FRAME_INTERVAL_US + offset + jitter,
                color,
                depth,
                mask,
                flow,
                preactivation: None,
            });
        }
        cameras.push(CameraRecord {
            id: cam.id.clone(),
            frames,
        });
    }
    let ang = Normal::<f64>::new(0.0, 0.005).expect("valid");
    let lin = Normal::<f64>::new(0.0, 5e-5).expect("valid");
    let imu = (0..cfg.frames)
        .map(|fi| {
            let mut s = ImuSample {
                timestamp_us: fi as i64 * FRAME_INTERVAL_US,
                angular_accel: [0.0; 3].map(|_: f64| ang.sample(&mut rng).clamp(-0.02, 0.02)),
                linear_accel: [0.0; 3].map(|_: f64| lin.sample(&mut rng).clamp(-2e-4, 2e-4)),
            };
            if let Some((at, mag)) = cfg.imu_spike {
                if at == fi {
                    s.angular_accel = [0.0, mag, 0.0];
                }
            }
            s
        })
        .collect();
    let manifest = Manifest {
        mode: cfg.mode,
        depth_source: cfg.source,
        rig: "rig.txt".into(),
        cameras,
        imu,
        metadata: serde_json::json!({ "generator": "synthetic", "seed": cfg.seed }),
    };
    let path = dir.join("manifest.json");
    let mut bytes = serde_json::to_vec_pretty(&manifest)?;
    bytes.push(b'\n');
    io::write_atomic(&path, &bytes)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::project_point;

    #[test]
    fn depth_matches_projection_of_hit_points() {
        let rig = sensor_rig(3, 64, 48).unwrap();
        let scene = Scene::default();
        for cam in rig.cameras() {
            let v = render_view(&scene, cam, 5);
            assert!(v.mask.count() > 100, "{} sees {} px", cam.id, v.mask.count());
            for y in 0..48 {
                for x in 0..64 {
                    if let Some(d) = v.depth.get(x, y) {
                        let p = crate::camera::camera_to_world(
                            &crate::camera::backproject_pixel(x as f64, y as f64, d, &cam.intrinsics).unwrap(),
                            &cam.pose,
                        );
                        let r = (p - scene.center(5)).norm();
                        assert!((r - scene.radius).abs() < 1e-9);
                        let (u, vv, _) = project_point(&p, cam).unwrap();
                        assert!((u - x as f64).abs() < 1e-9 && (vv - y as f64).abs() < 1e-9);
                    }
                }
            }
        }
    }

    #[test]
    fn flow_points_to_previous_surface_location() {
        let rig = sensor_rig(2, 64, 48).unwrap();
        let scene = Scene::default();
        let cam = &rig.cameras()[1];
        let now = render_view(&scene, cam, 4);
        let before = render_view(&scene, cam, 3);
        let mut checked = 0;
        for y in 0..48 {
            for x in 0..64 {
                let f = now.flow.get(x, y);
                let (sx, sy) = ((x as f64 + f[0]).round(), (y as f64 + f[1]).round());
                if !now.mask.get(x, y) || sx < 0.0 || sy < 0.0 || sx > 63.0 || sy > 47.0 {
                    continue;
                }
                if f[0].abs() + f[1].abs() > 0.0 && before.mask.get(sx as usize, sy as usize) {
                    checked += 1;
                }
            }
        }
        assert!(checked > 100);
        let moving = now.flow.get(32, 24);
        assert!(moving[0].abs() + moving[1].abs() > 1e-3);
    }

    #[test]
    fn stereo_rig_is_rectified_and_gated() {
        let rig = stereo_rig(6, 96, 72).unwrap();
        for w in rig.cameras().windows(2) {
            let b = crate::pipeline::check_rectified(&w[0], &w[1]).unwrap();
            assert!((b - STEREO_BASELINE).abs() < 1e-12);
            assert!(crate::stereo::gate_pair(&w[0], &w[1], crate::stereo::DEFAULT_MIN_OVERLAP));
        }
    }

    #[test]
    fn sessions_are_reproducible() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let cfg = SynthConfig {
            cameras: 2,
            frames: 3,
            ..Default::default()
        };
        let ma = write_session(a.path(), &cfg).unwrap();
        let mb = write_session(b.path(), &cfg).unwrap();
        assert_eq!(std::fs::read(ma).unwrap(), std::fs::read(mb).unwrap());
        for f in ["cam1/depth_00002.png", "cam0/flow_00001.flo", "rig.txt"] {
            assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap());
        }
        crate::pipeline::Session::load(&a.path().join("manifest.json")).unwrap();
    }
}
