use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::manifest::{DepthSource, Mode, Session};
use super::sync::{Cluster, MotionGate, SyncPolicy};
use crate::camera::Camera;
use crate::depthproc::{BilateralParams, EdgeErosionParams, DEFAULT_QUANTILE};
use crate::error::{Error, Result};
use crate::pointcloud::{NormalParams, RadiusFilterParams};
use crate::splats::ScaleActivationParams;
use crate::stereo::{gate_pair, DEFAULT_MIN_OVERLAP, WORKING_RANGE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Ingest,
    Outlier,
    Erode,
    Filter,
    Sync,
    Stereo,
    Reconstruct,
    Splat,
    Encode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Queue {
    Cpu,
    Accelerator,
}

impl TaskKind {
    pub fn default_queue(self) -> Queue {
        match self {
            TaskKind::Filter | TaskKind::Splat => Queue::Accelerator,
            _ => Queue::Cpu,
        }
    }
}

/// Where a reconstruction branch gets its depth: a sensor camera or an
/// ordered stereo pair whose first view owns the depth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Source {
    Camera(usize),
    Pair(usize, usize),
}

#[derive(Debug, Clone, PartialEq)]
pub enum TaskSpec {
    Ingest { camera: usize, frame: usize },
    Outlier { camera: usize, frame: usize },
    Erode { camera: usize, frame: usize },
    /// `temporal` uses the previous frame's filtered depth and the frame's flow.
    Filter { camera: usize, frame: usize, temporal: bool },
    Sync,
    Stereo { cluster: usize, first: usize, second: usize },
    Reconstruct { cluster: usize, source: Source },
    Splat { cluster: usize, source: Source },
    Encode { source: Source, clusters: Vec<usize> },
}

#[derive(Debug, Clone)]
pub struct TaskNode {
    pub id: String,
    pub kind: TaskKind,
    pub queue: Queue,
    pub deps: Vec<usize>,
    /// Manifest files read directly, besides the outputs of `deps`.
    pub external_inputs: Vec<PathBuf>,
    /// Relative to the artifact root.
    pub output: PathBuf,
    pub max_retries: u32,
    pub spec: TaskSpec,
}

pub const DEFAULT_MAX_RETRIES: u32 = 3;

/// Every tunable the tasks read. Part of each task fingerprint.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineParams {
    pub quantile: f64,
    pub erosion: EdgeErosionParams,
    pub bilateral: BilateralParams,
    pub radius_filter: RadiusFilterParams,
    pub normals: NormalParams,
    pub activation: ScaleActivationParams,
    pub stereo_window: usize,
    pub min_overlap: f64,
    pub sync: SyncPolicy,
    pub gate: MotionGate,
}

impl Default for PipelineParams {
    fn default() -> Self {
        PipelineParams {
            quantile: DEFAULT_QUANTILE,
            erosion: EdgeErosionParams::default(),
            bilateral: BilateralParams::default(),
            radius_filter: RadiusFilterParams::default(),
            normals: NormalParams::default(),
            activation: ScaleActivationParams::default(),
            stereo_window: 5,
            min_overlap: DEFAULT_MIN_OVERLAP,
            sync: SyncPolicy::default(),
            gate: MotionGate::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TaskGraph {
    pub nodes: Vec<TaskNode>,
    pub clusters: Vec<Cluster>,
    /// Stereo pairs that passed the overlap gate, as ordered rig indices.
    pub pairs: Vec<(usize, usize)>,
}

impl TaskGraph {
    pub fn count(&self, kind: TaskKind) -> usize {
        self.nodes.iter().filter(|n| n.kind == kind).count()
    }

    /// Direct dependents of each node.
    pub fn dependents(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.nodes.len()];
        for (i, n) in self.nodes.iter().enumerate() {
            for &d in &n.deps {
                out[d].push(i);
            }
        }
        out
    }
}

pub fn camera_dir(session: &Session, camera: usize, frame: usize) -> PathBuf {
    PathBuf::from(&session.manifest.cameras[camera].id).join(format!("{frame:05}"))
}

pub fn source_name(session: &Session, s: Source) -> String {
    let id = |i: usize| session.manifest.cameras[i].id.as_str();
    match s {
        Source::Camera(c) => id(c).to_string(),
        Source::Pair(a, b) => format!("{}__{}", id(a), id(b)),
    }
}

pub fn clusters_path() -> PathBuf {
    PathBuf::from("sync").join("clusters.json")
}

/// Cameras of a rectified pair must share intrinsics and orientation and be
/// displaced along their common x axis.
pub fn check_rectified(a: &Camera, b: &Camera) -> Result<f64> {
    let (ka, kb) = (&a.intrinsics, &b.intrinsics);
    if ka != kb {
        return Err(Error::InvalidGeometry(format!("{} and {} have different intrinsics", a.id, b.id)));
    }
    if (a.pose.rotation() - b.pose.rotation()).amax() > 1e-9 {
        return Err(Error::InvalidGeometry(format!("{} and {} are not parallel", a.id, b.id)));
    }
    let offset = a.pose.rotation().transpose() * (b.center() - a.center());
    let baseline = offset.norm();
    if baseline == 0.0 || offset.y.abs().max(offset.z.abs()) > 1e-6 * baseline {
        return Err(Error::InvalidGeometry(format!(
            "{} and {} are not displaced along the image rows",
            a.id, b.id
        )));
    }
    Ok(baseline)
}

/// Search range for a rectified pair: the disparity of the near end of the
/// working range, capped below the image width.
pub fn stereo_max_disparity(a: &Camera, baseline: f64) -> usize {
    let d = (a.intrinsics.fx * baseline / WORKING_RANGE.0).ceil() as usize;
    d.min(a.intrinsics.width.saturating_sub(1))
}

/// Node count implied by the session shape. With `F` total frames over all
/// cameras, `C` clusters, `N` cameras and `P` gated ordered pairs:
/// sensor `4F + 1 + 2CN + N`, stereo `F + 1 + 3CP + P`.
pub fn expected_node_count(source: DepthSource, total_frames: usize, clusters: usize, cameras: usize, pairs: usize) -> usize {
    match source {
        DepthSource::Sensor => 4 * total_frames + 1 + 2 * clusters * cameras + cameras,
        DepthSource::Stereo => total_frames + 1 + 3 * clusters * pairs + pairs,
    }
}

struct Builder {
    nodes: Vec<TaskNode>,
}

impl Builder {
    fn push(&mut self, id: String, kind: TaskKind, deps: Vec<usize>, external: Vec<PathBuf>, output: PathBuf, spec: TaskSpec) -> usize {
        self.nodes.push(TaskNode {
            id,
            kind,
            queue: kind.default_queue(),
            deps,
            external_inputs: external,
            output,
            max_retries: DEFAULT_MAX_RETRIES,
            spec,
        });
        self.nodes.len() - 1
    }
}

/// Builds the two-stage DAG. Stage one is an independent chain per camera
/// and frame; a single sync node is the barrier; stage two fans out per
/// cluster and per depth source, and one encode node per source packs the
/// stream. Nodes are listed in topological order.
pub fn build_task_graph(session: &Session, clusters: &[Cluster], params: &PipelineParams) -> Result<TaskGraph> {
    let m = &session.manifest;
    let cams = session.rig.cameras();
    let mut b = Builder { nodes: Vec::new() };
    let mut stage_one_tail: Vec<Vec<usize>> = Vec::with_capacity(m.cameras.len());

    for (ci, cam) in m.cameras.iter().enumerate() {
        let mut tails = Vec::with_capacity(cam.frames.len());
        let mut prev_filter: Option<usize> = None;
        for (fi, f) in cam.frames.iter().enumerate() {
            let dir = camera_dir(session, ci, fi);
            let tag = format!("{}/{fi:05}", cam.id);
            let color = session.resolve(&f.color);
            let mask = session.resolve(&f.mask);
            match m.depth_source {
                DepthSource::Sensor => {
                    let depth = session.resolve(f.depth.as_ref().expect("validated"));
                    let ingest = b.push(
                        format!("ingest:{tag}"),
                        TaskKind::Ingest,
                        vec![],
                        vec![color.clone(), depth, mask.clone()],
                        dir.join("ingest.png"),
                        TaskSpec::Ingest { camera: ci, frame: fi },
                    );
                    let outlier = b.push(
                        format!("outlier:{tag}"),
                        TaskKind::Outlier,
                        vec![ingest],
                        vec![mask.clone()],
                        dir.join("outlier.png"),
                        TaskSpec::Outlier { camera: ci, frame: fi },
                    );
                    let erode = b.push(
                        format!("erode:{tag}"),
                        TaskKind::Erode,
                        vec![outlier],
                        vec![mask],
                        dir.join("eroded.png"),
                        TaskSpec::Erode { camera: ci, frame: fi },
                    );
                    let temporal = m.mode == Mode::Offline && fi > 0 && f.flow.is_some();
                    let mut deps = vec![erode];
                    let mut external = vec![color];
                    if temporal {
                        deps.push(prev_filter.expect("frame > 0"));
                        external.push(session.resolve(&cam.frames[fi - 1].color));
                        external.push(session.resolve(f.flow.as_ref().expect("checked")));
                    }
                    let filter = b.push(
                        format!("filter:{tag}"),
                        TaskKind::Filter,
                        deps,
                        external,
                        dir.join("filtered.png"),
                        TaskSpec::Filter {
                            camera: ci,
                            frame: fi,
                            temporal,
                        },
                    );
                    prev_filter = Some(filter);
                    tails.push(filter);
                }
                DepthSource::Stereo => {
                    let ingest = b.push(
                        format!("ingest:{tag}"),
                        TaskKind::Ingest,
                        vec![],
                        vec![color, mask],
                        dir.join("mask.png"),
                        TaskSpec::Ingest { camera: ci, frame: fi },
                    );
                    tails.push(ingest);
                }
            }
        }
        stage_one_tail.push(tails);
    }

    let all_tails: Vec<usize> = stage_one_tail.iter().flatten().copied().collect();
    let sync = b.push("sync".into(), TaskKind::Sync, all_tails, vec![], clusters_path(), TaskSpec::Sync);

    let mut pairs = Vec::new();
    if m.depth_source == DepthSource::Stereo {
        for k in 0..cams.len().saturating_sub(1) {
            if gate_pair(&cams[k], &cams[k + 1], params.min_overlap) {
                check_rectified(&cams[k], &cams[k + 1])?;
                pairs.push((k, k + 1));
                pairs.push((k + 1, k));
            } else {
                log::warn!("pair {} / {} fails the overlap gate", cams[k].id, cams[k + 1].id);
            }
        }
    }

    let sources: Vec<Source> = match m.depth_source {
        DepthSource::Sensor => (0..cams.len()).map(Source::Camera).collect(),
        DepthSource::Stereo => pairs.iter().map(|&(a, c)| Source::Pair(a, c)).collect(),
    };
    let mut splat_nodes: Vec<Vec<usize>> = vec![Vec::new(); sources.len()];
    for (k, cl) in clusters.iter().enumerate() {
        let cdir = |what: &str| PathBuf::from(what).join(format!("{k:05}"));
        for (si, &src) in sources.iter().enumerate() {
            let name = source_name(session, src);
            let (depth_node, external) = match src {
                Source::Camera(c) => {
                    let f = &m.cameras[c].frames[cl.frames[c]];
                    (
                        stage_one_tail[c][cl.frames[c]],
                        vec![session.resolve(&f.color), session.resolve(&f.mask)],
                    )
                }
                Source::Pair(a, c) => {
                    let fa = &m.cameras[a].frames[cl.frames[a]];
                    let fc = &m.cameras[c].frames[cl.frames[c]];
                    let stereo = b.push(
                        format!("stereo:{k:05}/{name}"),
                        TaskKind::Stereo,
                        vec![sync, stage_one_tail[a][cl.frames[a]], stage_one_tail[c][cl.frames[c]]],
                        vec![session.resolve(&fa.color), session.resolve(&fc.color)],
                        cdir("stereo").join(format!("{name}.png")),
                        TaskSpec::Stereo {
                            cluster: k,
                            first: a,
                            second: c,
                        },
                    );
                    (stereo, vec![session.resolve(&fa.color)])
                }
            };
            let mask_node = match src {
                Source::Camera(_) => None,
                Source::Pair(a, _) => Some(stage_one_tail[a][cl.frames[a]]),
            };
            let mut deps = vec![sync, depth_node];
            deps.extend(mask_node);
            deps.dedup();
            b.push(
                format!("reconstruct:{k:05}/{name}"),
                TaskKind::Reconstruct,
                deps.clone(),
                external.clone(),
                cdir("clouds").join(format!("{name}.ply")),
                TaskSpec::Reconstruct { cluster: k, source: src },
            );
            let first = match src {
                Source::Camera(c) | Source::Pair(c, _) => c,
            };
            let mut splat_external = external;
            if let Some(p) = &m.cameras[first].frames[cl.frames[first]].preactivation {
                splat_external.push(session.resolve(p));
            }
            let splat = b.push(
                format!("splat:{k:05}/{name}"),
                TaskKind::Splat,
                deps,
                splat_external,
                cdir("splats").join(format!("{name}.splat")),
                TaskSpec::Splat { cluster: k, source: src },
            );
            splat_nodes[si].push(splat);
        }
    }
    for (si, &src) in sources.iter().enumerate() {
        let name = source_name(session, src);
        b.push(
            format!("encode:{name}"),
            TaskKind::Encode,
            splat_nodes[si].clone(),
            vec![],
            PathBuf::from("streams").join(format!("{name}.vsplat")),
            TaskSpec::Encode {
                source: src,
                clusters: (0..clusters.len()).collect(),
            },
        );
    }
    Ok(TaskGraph {
        nodes: b.nodes,
        clusters: clusters.to_vec(),
        pairs,
    })
}
