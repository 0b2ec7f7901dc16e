use std::path::{Path, PathBuf};

use serde::Serialize;

use super::graph::{camera_dir, check_rectified, clusters_path, source_name, stereo_max_disparity, PipelineParams, Source, TaskGraph, TaskNode, TaskSpec};
use super::manifest::{FrameRecord, Session};
use super::sync::Cluster;
use crate::camera::Camera;
use crate::codec::{decode_splat_frame, encode_splat_frame, encode_video_splat, write_ply_pointcloud};
use crate::depthproc::{bilateral_spatial, bilateral_spatiotemporal, erode_mask_edges, quantile_outlier_removal};
use crate::error::{Error, Result};
use crate::io;
use crate::pointcloud::{estimate_normals, radius_outlier_filter, reconstruct_pointcloud};
use crate::raster::{DepthMap, GuidanceImage, Mask};
use crate::splats::{splats_from_preactivations, PreactivationMap};
use crate::stereo::{stereo_depth, RectifiedPair};

/// Read-only state shared by every task of a run.
pub struct TaskContext<'a> {
    pub session: &'a Session,
    pub artifacts: &'a Path,
    pub params: &'a PipelineParams,
    pub graph: &'a TaskGraph,
}

#[derive(Serialize)]
struct ClustersFile<'a> {
    cameras: Vec<&'a str>,
    clusters: &'a [Cluster],
}

impl TaskContext<'_> {
    fn frame(&self, camera: usize, frame: usize) -> &FrameRecord {
        &self.session.manifest.cameras[camera].frames[frame]
    }

    fn camera(&self, camera: usize) -> &Camera {
        &self.session.rig.cameras()[camera]
    }

    fn artifact(&self, rel: impl AsRef<Path>) -> PathBuf {
        self.artifacts.join(rel)
    }

    fn stage_one(&self, camera: usize, frame: usize, name: &str) -> PathBuf {
        self.artifact(camera_dir(self.session, camera, frame).join(name))
    }

    fn cluster_frame(&self, cluster: usize, camera: usize) -> usize {
        self.graph.clusters[cluster].frames[camera]
    }

    fn color(&self, camera: usize, frame: usize) -> Result<GuidanceImage> {
        io::read_color_png(&self.session.resolve(&self.frame(camera, frame).color))
    }

    fn mask(&self, camera: usize, frame: usize) -> Result<Mask> {
        io::read_mask_png(&self.session.resolve(&self.frame(camera, frame).mask))
    }

    /// Depth, color and mask feeding reconstruction for one cluster and source.
    fn branch_inputs(&self, cluster: usize, source: Source) -> Result<(DepthMap, GuidanceImage, Mask, usize)> {
        match source {
            Source::Camera(c) => {
                let f = self.cluster_frame(cluster, c);
                let depth = io::read_depth_png(&self.stage_one(c, f, "filtered.png"))?;
                Ok((depth, self.color(c, f)?, self.mask(c, f)?, c))
            }
            Source::Pair(a, _) => {
                let f = self.cluster_frame(cluster, a);
                let name = source_name(self.session, source);
                let depth = io::read_depth_png(&self.artifact(
                    PathBuf::from("stereo").join(format!("{cluster:05}")).join(format!("{name}.png")),
                ))?;
                let mask = io::read_mask_png(&self.stage_one(a, f, "mask.png"))?;
                Ok((depth, self.color(a, f)?, mask, a))
            }
        }
    }
}

fn check_dims(what: &str, found: (usize, usize), cam: &Camera) -> Result<()> {
    let expected = (cam.intrinsics.width, cam.intrinsics.height);
    if found != expected {
        log::error!("{what} for {} is {}x{}, calibration says {}x{}", cam.id, found.0, found.1, expected.0, expected.1);
        return Err(Error::DimensionMismatch { expected, found });
    }
    Ok(())
}

/// Runs one node and returns the bytes of its output artifact.
pub fn run_task(ctx: &TaskContext, node: &TaskNode) -> Result<Vec<u8>> {
    let p = ctx.params;
    match node.spec {
        TaskSpec::Ingest { camera, frame } => {
            let cam = ctx.camera(camera);
            let color = ctx.color(camera, frame)?;
            let mask = ctx.mask(camera, frame)?;
            check_dims("color", color.dims(), cam)?;
            check_dims("mask", mask.dims(), cam)?;
            match &ctx.frame(camera, frame).depth {
                Some(path) if node.output.ends_with("ingest.png") => {
                    let depth = io::read_depth_png(&ctx.session.resolve(path))?;
                    check_dims("depth", depth.dims(), cam)?;
                    io::encode_depth_png(&depth)
                }
                _ => io::encode_mask_png(&mask),
            }
        }
        TaskSpec::Outlier { camera, frame } => {
            let depth = io::read_depth_png(&ctx.stage_one(camera, frame, "ingest.png"))?;
            let (out, _) = quantile_outlier_removal(&depth, &ctx.mask(camera, frame)?, p.quantile)?;
            io::encode_depth_png(&out)
        }
        TaskSpec::Erode { camera, frame } => {
            let depth = io::read_depth_png(&ctx.stage_one(camera, frame, "outlier.png"))?;
            let out = erode_mask_edges(&depth, &ctx.mask(camera, frame)?, &p.erosion)?;
            io::encode_depth_png(&out)
        }
        TaskSpec::Filter { camera, frame, temporal } => {
            let depth = io::read_depth_png(&ctx.stage_one(camera, frame, "eroded.png"))?;
            let guide = ctx.color(camera, frame)?;
            let out = if temporal {
                let prev = io::read_depth_png(&ctx.stage_one(camera, frame - 1, "filtered.png"))?;
                let prev_guide = ctx.color(camera, frame - 1)?;
                let flow_path = ctx.frame(camera, frame).flow.as_ref().expect("temporal filter has flow");
                let flow = io::read_flo(&ctx.session.resolve(flow_path))?;
                bilateral_spatiotemporal(&depth, &guide, &prev, &prev_guide, &flow, &p.bilateral)?
            } else {
                bilateral_spatial(&depth, &guide, &p.bilateral)?
            };
            io::encode_depth_png(&out)
        }
        TaskSpec::Sync => {
            let file = ClustersFile {
                cameras: ctx.session.manifest.cameras.iter().map(|c| c.id.as_str()).collect(),
                clusters: &ctx.graph.clusters,
            };
            let mut bytes = serde_json::to_vec_pretty(&file)?;
            bytes.push(b'\n');
            debug_assert!(node.output == clusters_path());
            Ok(bytes)
        }
        TaskSpec::Stereo { cluster, first, second } => {
            let (a, b) = (ctx.camera(first), ctx.camera(second));
            let baseline = check_rectified(a, b)?;
            let (fa, fb) = (ctx.cluster_frame(cluster, first), ctx.cluster_frame(cluster, second));
            let pair = RectifiedPair::new(ctx.color(first, fa)?, ctx.color(second, fb)?, a.intrinsics.fx, baseline)?;
            let ma = io::read_mask_png(&ctx.stage_one(first, fa, "mask.png"))?;
            let mb = io::read_mask_png(&ctx.stage_one(second, fb, "mask.png"))?;
            let depth = if ma.count() == 0 || mb.count() == 0 {
                log::warn!("{}: empty foreground, no stereo depth", node.id);
                DepthMap::invalid(ma.width(), ma.height())
            } else {
                stereo_depth(&pair, &ma, &mb, p.stereo_window, stereo_max_disparity(a, baseline))?.depth
            };
            io::encode_depth_png(&depth)
        }
        TaskSpec::Reconstruct { cluster, source } => {
            let (depth, color, mask, c) = ctx.branch_inputs(cluster, source)?;
            let cam = ctx.camera(c);
            let mut cloud = reconstruct_pointcloud(&depth, &color, &mask, cam)?;
            cloud.source_camera = source_name(ctx.session, source);
            let cloud = radius_outlier_filter(&cloud, &p.radius_filter)?;
            let cloud = estimate_normals(&cloud, &p.normals, &cam.center())?;
            Ok(write_ply_pointcloud(&cloud))
        }
        TaskSpec::Splat { cluster, source } => {
            let (depth, color, mask, c) = ctx.branch_inputs(cluster, source)?;
            let cam = ctx.camera(c);
            let pre = match &ctx.frame(c, ctx.cluster_frame(cluster, c)).preactivation {
                Some(path) => io::read_preactivations(&ctx.session.resolve(path))?,
                None => PreactivationMap::procedural(&depth, cam),
            };
            let mut frame = splats_from_preactivations(&depth, &color, &mask, cam, &pre, &p.activation, cluster as u64)?;
            frame.source_camera = source_name(ctx.session, source);
            Ok(encode_splat_frame(&frame))
        }
        TaskSpec::Encode { source, ref clusters } => {
            let name = source_name(ctx.session, source);
            let frames = clusters
                .iter()
                .map(|k| {
                    let path = ctx.artifact(PathBuf::from("splats").join(format!("{k:05}")).join(format!("{name}.splat")));
                    decode_splat_frame(&io::read_bytes(&path)?)
                })
                .collect::<Result<Vec<_>>>()?;
            encode_video_splat(&frames)
        }
    }
}
