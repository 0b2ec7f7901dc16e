use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde_json::json;
use volcap_core::camera::{Camera, Rig};
use volcap_core::codec::{
    decode_splat_frame, decode_video_splat, encode_splat_frame, encode_video_splat, ply_summary, read_ply_gaussian,
    read_ply_pointcloud, video_splat_index, write_ply_gaussian, write_ply_pointcloud, RECORD_SIZE, VSPL_MAGIC,
};
use volcap_core::depthproc::{
    bilateral_spatial, bilateral_spatiotemporal, erode_mask_edges, quantile_outlier_removal, BilateralParams, EdgeErosionParams,
};
use volcap_core::io;
use volcap_core::pipeline::{
    gate_session, run_pipeline, sync_frames, DepthSource, ExecOptions, GateDecision, Manifest, MotionGate, Mode,
    PipelineParams, RunReport, Session, SyncPolicy, REPORT_FILE,
};
use volcap_core::pointcloud::{estimate_normals, radius_outlier_filter, reconstruct_pointcloud, NormalParams, RadiusFilterParams};
use volcap_core::raster::Mask;
use volcap_core::render::{
    rasterize_splats, render_pointcloud, select_along_path, BezierPath, RenderSettings, SelectionMode, SourceSelection,
};
use volcap_core::splats::{
    reconstruction_loss, scale_magnitudes, soft_histogram_entropy, splats_from_preactivations, LossParams, PreactivationMap,
    ScaleActivationParams, SplatFrame,
};
use volcap_core::stereo::{stereo_depth, RectifiedPair, WORKING_RANGE};
use volcap_core::synthetic::{write_session, SynthConfig};

use crate::args::*;
use crate::error::{CliError, CliResult, Context};

fn read_text(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| volcap_core::Error::io(path, e).into())
}

fn load_rig(path: &Path) -> CliResult<Rig> {
    Rig::parse(&read_text(path)?).at(path)
}

fn extension(path: &Path) -> String {
    path.extension().map(|e| e.to_string_lossy().to_ascii_lowercase()).unwrap_or_default()
}

impl BilateralArgs {
    fn params(&self) -> BilateralParams {
        BilateralParams {
            radius: self.radius,
            sigma_s: self.sigma_s,
            sigma_r: self.sigma_r,
            sigma_t: self.sigma_t,
            lambda_t: self.lambda_t,
        }
    }
}

impl CleanArgs {
    fn erosion(&self) -> EdgeErosionParams {
        EdgeErosionParams {
            low: self.edge_low,
            high: self.edge_high,
            erode_px: self.erode_px,
        }
    }
}

impl CloudArgs {
    fn radius(&self) -> RadiusFilterParams {
        RadiusFilterParams {
            radius: self.outlier_radius,
            min_neighbors: self.min_neighbors,
        }
    }

    fn normals(&self) -> NormalParams {
        NormalParams {
            radius: self.normal_radius,
            max_nn: self.normal_max_nn,
        }
    }
}

impl SplatArgs {
    fn activation(&self) -> ScaleActivationParams {
        ScaleActivationParams {
            s_max: self.s_max,
            ..Default::default()
        }
    }
}

impl GateArgs {
    fn policy(&self) -> CliResult<(SyncPolicy, MotionGate)> {
        let mut problems = Vec::new();
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            problems.push(format!("--fps must be positive, got {}", self.fps));
        }
        if !(self.drift_limit_ms >= 0.0) {
            problems.push(format!("--drift-limit-ms must be non-negative, got {}", self.drift_limit_ms));
        }
        if !(self.angular_limit > 0.0 && self.linear_limit > 0.0) {
            problems.push("motion limits must be positive".into());
        }
        if !problems.is_empty() {
            return Err(CliError::validation(problems.join("; ")));
        }
        let interval = (1e6 / self.fps).round() as i64;
        Ok((
            SyncPolicy {
                drift_limit_us: (self.drift_limit_ms * 1e3).round() as i64,
                frame_interval_us: interval,
                cluster_tolerance_us: interval / 2,
            },
            MotionGate {
                angular_limit: self.angular_limit,
                linear_limit: self.linear_limit,
            },
        ))
    }
}

pub fn filter_depth(a: &FilterDepthArgs) -> CliResult<()> {
    let n = a.depth.len();
    let mut problems = Vec::new();
    if a.color.len() != n {
        problems.push(format!("{n} depth frames but {} color frames", a.color.len()));
    }
    if !a.mask.is_empty() && a.mask.len() != n {
        problems.push(format!("{n} depth frames but {} masks", a.mask.len()));
    }
    if a.spatial_only && !a.flow.is_empty() {
        problems.push("--spatial-only conflicts with --flow".into());
    }
    if !a.flow.is_empty() && a.flow.len() + 1 != n {
        problems.push(format!("{n} depth frames need {} flow fields, got {}", n - 1, a.flow.len()));
    }
    let params = a.bilateral.params();
    if let Err(e) = params.validate() {
        problems.push(e.to_string());
    }
    if !problems.is_empty() {
        return Err(CliError::validation(problems.join("; ")));
    }
    let mut prev: Option<(volcap_core::raster::DepthMap, volcap_core::raster::GuidanceImage)> = None;
    for i in 0..n {
        let mut depth = io::read_depth_png(&a.depth[i])?;
        let color = io::read_color_png(&a.color[i])?;
        if let Some(mp) = a.mask.get(i) {
            let mask = io::read_mask_png(mp)?;
            depth = quantile_outlier_removal(&depth, &mask, a.clean.quantile).at(mp)?.0;
            depth = erode_mask_edges(&depth, &mask, &a.clean.erosion()).at(mp)?;
        }
        let filtered = match (&prev, i.checked_sub(1).and_then(|j| a.flow.get(j))) {
            (Some((pd, pc)), Some(fp)) => {
                let flow = io::read_flo(fp)?;
                bilateral_spatiotemporal(&depth, &color, pd, pc, &flow, &params).at(fp)?
            }
            _ => bilateral_spatial(&depth, &color, &params).at(&a.depth[i])?,
        };
        let out = a.out_dir.join(format!("filtered_{i:05}.png"));
        io::write_depth_png(&out, &filtered)?;
        println!("{}", out.display());
        prev = Some((filtered, color));
    }
    Ok(())
}

pub fn stereo(a: &StereoDepthArgs) -> CliResult<()> {
    let first = io::read_color_png(&a.first)?;
    let second = io::read_color_png(&a.second)?;
    let mf = io::read_mask_png(&a.mask_first)?;
    let ms = io::read_mask_png(&a.mask_second)?;
    let w = first.width();
    let d_max = a
        .max_disparity
        .unwrap_or_else(|| ((a.focal * a.baseline / WORKING_RANGE.0).ceil() as usize).min(w.saturating_sub(1)));
    let pair = RectifiedPair::new(first, second, a.focal, a.baseline).at(&a.second)?;
    let out = stereo_depth(&pair, &mf, &ms, a.window, d_max).at(&a.first)?;
    io::write_depth_png(&a.out, &out.depth)?;
    if let Some(p) = &a.disparity_out {
        io::write_disparity(p, &out.disparity)?;
    }
    println!("flip_patch: {}", out.flipped);
    println!("valid_depth: {}", out.depth.valid_count());
    Ok(())
}

fn find_camera<'a>(rig: &'a Rig, id: &str, rig_path: &Path) -> CliResult<&'a Camera> {
    rig.get(id).ok_or_else(|| {
        let ids: Vec<&str> = rig.cameras().iter().map(|c| c.id.as_str()).collect();
        let mut e = CliError::validation(format!("camera {id:?} not in rig ({})", ids.join(", ")));
        e.file = Some(rig_path.to_path_buf());
        e
    })
}

pub fn reconstruct(a: &ReconstructArgs) -> CliResult<()> {
    if a.points.is_none() && a.splats.is_none() && a.gaussian_ply.is_none() {
        return Err(CliError::validation("nothing to write: give --points, --splats or --gaussian-ply"));
    }
    let rig = load_rig(&a.rig)?;
    let cam = find_camera(&rig, &a.camera, &a.rig)?;
    let depth = io::read_depth_png(&a.depth)?;
    let color = io::read_color_png(&a.color)?;
    let mask = io::read_mask_png(&a.mask)?;
    if let Some(out) = &a.points {
        let mut cloud = reconstruct_pointcloud(&depth, &color, &mask, cam).at(&a.depth)?;
        if !a.no_outlier_filter {
            cloud = radius_outlier_filter(&cloud, &a.cloud.radius())?;
        }
        let cloud = estimate_normals(&cloud, &a.cloud.normals(), &cam.center())?;
        io::write_atomic(out, &write_ply_pointcloud(&cloud))?;
        println!("points: {} -> {}", cloud.len(), out.display());
    }
    if a.splats.is_some() || a.gaussian_ply.is_some() {
        let pre = match &a.preactivations {
            Some(p) => io::read_preactivations(p)?,
            None => PreactivationMap::procedural(&depth, cam),
        };
        let mut frame = splats_from_preactivations(&depth, &color, &mask, cam, &pre, &a.splat.activation(), 0).at(&a.depth)?;
        frame.source_camera = cam.id.clone();
        if let Some(out) = &a.splats {
            io::write_atomic(out, &encode_splat_frame(&frame))?;
            println!("splats: {} -> {}", frame.splats.len(), out.display());
        }
        if let Some(out) = &a.gaussian_ply {
            io::write_atomic(out, &write_ply_gaussian(&frame))?;
            println!("gaussians: {} -> {}", frame.splats.len(), out.display());
        }
    }
    Ok(())
}

pub fn render(a: &RenderArgs) -> CliResult<()> {
    if a.frames == 0 {
        return Err(CliError::validation("--frames must be at least 1"));
    }
    let rig = load_rig(&a.rig)?;
    let path = BezierPath::parse(&read_text(&a.path)?).at(&a.path)?;
    let poses = path.poses(a.frames, &a.target, &a.up).at(&a.path)?;
    let mode = match a.mode {
        RigMode::Sensor => SelectionMode::Sensor,
        RigMode::Stereo => SelectionMode::Stereo,
    };
    let picks = select_along_path(&poses, &rig, mode).at(&a.rig)?;
    let k = rig.cameras().first().ok_or_else(|| CliError::validation("rig has no cameras"))?.intrinsics;
    let mut settings = RenderSettings::for_intrinsics(&k);
    settings.footprint_term = a.footprint;
    settings.validate()?;
    let ids = |i: usize| rig.cameras()[i].id.clone();
    enum Loaded {
        Points(volcap_core::pointcloud::PointCloud),
        Splats(SplatFrame),
    }
    let mut cache: HashMap<String, Loaded> = HashMap::new();
    for (j, (pose, pick)) in poses.iter().zip(&picks).enumerate() {
        let name = match *pick {
            SourceSelection::Camera(i) => ids(i),
            SourceSelection::Pair(x, y) => format!("{}__{}", ids(x), ids(y)),
        };
        if !cache.contains_key(&name) {
            let loaded = match a.source {
                RenderSource::Points => {
                    let p = a.input_dir.join(format!("{name}.ply"));
                    Loaded::Points(read_ply_pointcloud(&io::read_bytes(&p)?).at(&p)?)
                }
                RenderSource::Splats => {
                    let p = a.input_dir.join(format!("{name}.splat"));
                    Loaded::Splats(decode_splat_frame(&io::read_bytes(&p)?).at(&p)?)
                }
            };
            cache.insert(name.clone(), loaded);
        }
        let vcam = Camera::new("virtual", k, *pose);
        let img = match &cache[&name] {
            Loaded::Points(c) => render_pointcloud(c, &vcam, a.point_size, &settings)?,
            Loaded::Splats(f) => rasterize_splats(f, &vcam, &settings)?,
        };
        let out = a.out_dir.join(format!("frame_{j:05}.png"));
        io::write_render_png(&out, &img)?;
        println!("{} {name}", out.display());
    }
    Ok(())
}

fn read_splat_frames(path: &Path) -> CliResult<Vec<SplatFrame>> {
    let bytes = io::read_bytes(path)?;
    match extension(path).as_str() {
        "splat" => Ok(vec![decode_splat_frame(&bytes).at(path)?]),
        "vsplat" => decode_video_splat(&bytes).at(path),
        "ply" => Ok(vec![read_ply_gaussian(&bytes).at(path)?]),
        other => {
            let mut e = CliError::validation(format!("unsupported splat input extension {other:?}"));
            e.file = Some(path.to_path_buf());
            Err(e)
        }
    }
}

pub fn pack(a: &PackArgs) -> CliResult<()> {
    let format = match a.format {
        Some(f) => f,
        None => match extension(&a.out).as_str() {
            "splat" => PackFormat::Splat,
            "vsplat" => PackFormat::Vsplat,
            "ply" => PackFormat::Ply,
            other => {
                return Err(CliError::validation(format!(
                    "cannot infer the output format from extension {other:?}; pass --format"
                )))
            }
        },
    };
    let mut frames = Vec::new();
    for p in &a.inputs {
        frames.extend(read_splat_frames(p)?);
    }
    let single = |frames: &[SplatFrame]| -> CliResult<SplatFrame> {
        match frames {
            [f] => Ok(f.clone()),
            _ => Err(CliError::validation(format!(
                "single-frame output needs exactly one input frame, got {}",
                frames.len()
            ))),
        }
    };
    let bytes = match format {
        PackFormat::Splat => encode_splat_frame(&single(&frames)?),
        PackFormat::Ply => write_ply_gaussian(&single(&frames)?),
        PackFormat::Vsplat => encode_video_splat(&frames)?,
    };
    io::write_atomic(&a.out, &bytes)?;
    println!("frames: {}", frames.len());
    println!("bytes: {}", bytes.len());
    Ok(())
}

pub fn sync(a: &SyncArgs) -> CliResult<()> {
    let session = Session::load(&a.manifest).at(&a.manifest)?;
    let (policy, gate) = a.gate.policy()?;
    let m = &session.manifest;
    let clusters = sync_frames(m, &policy);
    let decision = gate_session(m, &policy, &gate);
    let spreads: Vec<i64> = clusters.iter().map(|c| c.spread_us(m)).collect();
    let report = json!({
        "cameras": m.cameras.iter().map(|c| &c.id).collect::<Vec<_>>(),
        "frames_per_camera": m.cameras.iter().map(|c| c.frames.len()).collect::<Vec<_>>(),
        "cluster_count": clusters.len(),
        "max_spread_us": spreads.iter().max(),
        "gate": decision,
        "clusters": clusters,
    });
    let text = serde_json::to_string_pretty(&report)? + "\n";
    match &a.out {
        Some(p) => io::write_atomic(p, text.as_bytes())?,
        None => print!("{text}"),
    }
    match decision {
        GateDecision::Accept => Ok(()),
        GateDecision::Reject { detail, .. } => Err(volcap_core::Error::GateRejected(detail).into()),
    }
}

pub fn run(a: &RunArgs) -> CliResult<()> {
    let (sync, gate) = a.gate.policy()?;
    let params = PipelineParams {
        quantile: a.clean.quantile,
        erosion: a.clean.erosion(),
        bilateral: a.bilateral.params(),
        radius_filter: a.cloud.radius(),
        normals: a.cloud.normals(),
        activation: a.splat.activation(),
        stereo_window: a.stereo_window,
        min_overlap: a.min_overlap,
        sync,
        gate,
    };
    let mut problems = Vec::new();
    if a.cpu_workers == 0 || a.accel_workers == Some(0) {
        problems.push("worker counts must be at least 1".to_string());
    }
    for e in [
        params.bilateral.validate().err(),
        params.erosion.validate().err(),
        params.radius_filter.validate().err(),
        params.activation.validate().err(),
    ]
    .into_iter()
    .flatten()
    {
        problems.push(e.to_string());
    }
    if a.stereo_window.is_multiple_of(2) {
        problems.push(format!("--stereo-window must be odd, got {}", a.stereo_window));
    }
    if !problems.is_empty() {
        return Err(CliError::validation(problems.join("; ")));
    }
    let session = Session::load(&a.manifest).at(&a.manifest)?;
    let mut opts = ExecOptions::with_workers(a.cpu_workers);
    if let Some(n) = a.accel_workers {
        opts.accelerator_workers = n;
    }
    let report = run_pipeline(&session, &params, &a.out, &opts).at(&a.manifest)?;
    print!("{}", summary(&report));
    if !report.succeeded() {
        let mut e = CliError::task(format!(
            "{} tasks failed, {} aborted",
            report.count(volcap_core::pipeline::TaskStatus::Failed),
            report.count(volcap_core::pipeline::TaskStatus::Aborted)
        ));
        e.file = Some(a.out.join(REPORT_FILE));
        return Err(e);
    }
    Ok(())
}

fn summary(r: &RunReport) -> String {
    use volcap_core::pipeline::TaskStatus::*;
    format!(
        "clusters: {}\ntasks: {}\ndone: {}\ncached: {}\nfailed: {}\naborted: {}\nwall_ms: {:.1}\n",
        r.clusters,
        r.tasks.len(),
        r.count(Done),
        r.count(Cached),
        r.count(Failed),
        r.count(Aborted),
        r.wall_ms
    )
}

fn png_header(bytes: &[u8]) -> Option<(u32, u32, u8, &'static str)> {
    if bytes.len() < 26 || &bytes[..8] != b"\x89PNG\r\n\x1a\n" || &bytes[12..16] != b"IHDR" {
        return None;
    }
    let w = u32::from_be_bytes(bytes[16..20].try_into().ok()?);
    let h = u32::from_be_bytes(bytes[20..24].try_into().ok()?);
    let kind = match bytes[25] {
        0 => "gray",
        2 => "rgb",
        3 => "indexed",
        4 => "gray+alpha",
        6 => "rgba",
        _ => "unknown",
    };
    Some((w, h, bytes[24], kind))
}

pub fn info(a: &InfoArgs) -> CliResult<()> {
    let path = &a.file;
    let bytes = io::read_bytes(path)?;
    let mut out = String::new();
    let ext = extension(path);
    if bytes.starts_with(&VSPL_MAGIC) || ext == "vsplat" {
        let index = video_splat_index(&bytes).at(path)?;
        let sizes: Vec<String> = index.iter().map(|r| r.len().to_string()).collect();
        let _ = writeln!(out, "format: vsplat");
        let _ = writeln!(out, "version: {}", u16::from_le_bytes([bytes[4], bytes[5]]));
        let _ = writeln!(out, "frames: {}", index.len());
        let _ = writeln!(out, "frame_bytes: {}", sizes.join(" "));
        let _ = writeln!(out, "splats: {}", index.iter().map(|r| r.len() / RECORD_SIZE).sum::<usize>());
    } else if ext == "splat" {
        let frame = decode_splat_frame(&bytes).at(path)?;
        let _ = writeln!(out, "format: splat");
        let _ = writeln!(out, "splats: {}", frame.splats.len());
    } else if bytes.starts_with(b"ply") {
        let s = ply_summary(&bytes).at(path)?;
        let _ = writeln!(out, "format: ply {}", s.format);
        for (name, count, props) in &s.elements {
            let _ = writeln!(out, "element: {name} {count} [{}]", props.join(" "));
        }
        for c in &s.comments {
            let _ = writeln!(out, "comment: {c}");
        }
    } else if let Some((w, h, depth, kind)) = png_header(&bytes) {
        let _ = writeln!(out, "format: png");
        let _ = writeln!(out, "size: {w}x{h}");
        let _ = writeln!(out, "pixel: {kind} {depth}-bit");
    } else if ext == "flo" {
        let f = io::decode_flo(&bytes).at(path)?;
        let _ = writeln!(out, "format: flo\nsize: {}x{}", f.width(), f.height());
    } else if bytes.starts_with(&io::DISPARITY_MAGIC) {
        let d = io::decode_disparity(&bytes).at(path)?;
        let _ = writeln!(out, "format: disparity\nsize: {}x{}\nvalid: {}", d.width(), d.height(), d.valid_count());
    } else if bytes.starts_with(&io::PREACTIVATION_MAGIC) {
        let p = io::decode_preactivations(&bytes).at(path)?;
        let (w, h) = p.dims();
        let _ = writeln!(out, "format: preactivations\nsize: {w}x{h}");
    } else if ext == "json" {
        if let Ok(m) = serde_json::from_slice::<Manifest>(&bytes) {
            let _ = writeln!(out, "format: manifest");
            let _ = writeln!(out, "mode: {}", if m.mode == Mode::Online { "online" } else { "offline" });
            let _ = writeln!(
                out,
                "depth_source: {}",
                if m.depth_source == DepthSource::Sensor { "sensor" } else { "stereo" }
            );
            for c in &m.cameras {
                let _ = writeln!(out, "camera: {} {} frames", c.id, c.frames.len());
            }
            let _ = writeln!(out, "imu_samples: {}", m.imu.len());
        } else {
            let r: RunReport = serde_json::from_slice(&bytes).at(path)?;
            let _ = write!(out, "format: run report\n{}", summary(&r));
        }
    } else {
        let text = String::from_utf8_lossy(&bytes);
        match Rig::parse(&text) {
            Ok(rig) => {
                let _ = writeln!(out, "format: rig");
                for c in rig.cameras() {
                    let k = &c.intrinsics;
                    let p = c.center();
                    let _ = writeln!(
                        out,
                        "camera: {} {}x{} f={:.3} center=({:.4}, {:.4}, {:.4})",
                        c.id, k.width, k.height, k.fx, p.x, p.y, p.z
                    );
                }
            }
            Err(rig_err) => match BezierPath::parse(&text) {
                Ok(bz) => {
                    let _ = writeln!(out, "format: bezier path");
                    for c in &bz.control {
                        let _ = writeln!(out, "control: {} {} {}", c.x, c.y, c.z);
                    }
                }
                Err(_) => {
                    let mut e = CliError::from(rig_err);
                    e.msg = format!("unrecognized file type ({})", e.msg);
                    e.file = Some(path.to_path_buf());
                    return Err(e);
                }
            },
        }
    }
    print!("{out}");
    Ok(())
}

pub fn score(a: &ScoreArgs) -> CliResult<()> {
    let target = io::read_color_png(&a.target)?;
    let rendered = io::read_color_png(&a.rendered)?;
    let mask = match &a.mask {
        Some(p) => io::read_mask_png(p)?,
        None => Mask::filled(target.width(), target.height(), true),
    };
    let mut p = LossParams {
        lambda_l1: a.lambda_l1,
        lambda_ssim: a.lambda_ssim,
        delta: a.delta,
        window: a.window,
        ..Default::default()
    };
    p.entropy.lambda_ent = a.lambda_ent;
    let rec = reconstruction_loss(&target, &rendered, &mask, &p).at(&a.rendered)?.value;
    let ent = match &a.splats {
        Some(path) => {
            let frames = read_splat_frames(path)?;
            let scales: Vec<[f64; 3]> = frames
                .iter()
                .flat_map(|f| f.splats.iter().map(|s| [s.scales.x, s.scales.y, s.scales.z]))
                .collect();
            let scales = scale_magnitudes(&scales);
            Some(soft_histogram_entropy(&scales, &p.entropy).at(path)?.value)
        }
        None => None,
    };
    let report = json!({
        "reconstruction": rec,
        "entropy": ent,
        "total": rec + ent.unwrap_or(0.0),
    });
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

pub fn synth(a: &SynthArgs) -> CliResult<()> {
    let mut problems = Vec::new();
    if a.cameras == 0 || a.frames == 0 {
        problems.push("--cameras and --frames must be at least 1".to_string());
    }
    if a.width < 2 || a.height < 2 {
        problems.push("--width and --height must be at least 2".to_string());
    }
    if !problems.is_empty() {
        return Err(CliError::validation(problems.join("; ")));
    }
    let cfg = SynthConfig {
        cameras: a.cameras,
        frames: a.frames,
        width: a.width,
        height: a.height,
        source: match a.mode {
            RigMode::Sensor => DepthSource::Sensor,
            RigMode::Stereo => DepthSource::Stereo,
        },
        mode: if a.online { Mode::Online } else { Mode::Offline },
        seed: a.seed,
        offsets_us: a.offsets_ms.iter().map(|ms| (ms * 1e3).round() as i64).collect(),
        jitter_us: (a.jitter_ms * 1e3).round() as i64,
        imu_spike: a.imu_spike.map(|v| (a.frames / 2, v)),
        ..Default::default()
    };
    let manifest: PathBuf = write_session(&a.out, &cfg)?;
    println!("{}", manifest.display());
    Ok(())
}
