use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::Vector3;

#[derive(Debug, Parser)]
#[command(name = "volcap", version, about = "Depth cleaning, stereo, point clouds and Gaussian splats for multi-camera capture")]
pub struct Cli {
    /// Increase log verbosity (-v info, -vv debug)
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Clean and filter a depth sequence (spatial or spatiotemporal bilateral)
    FilterDepth(FilterDepthArgs),
    /// Depth for the first view of a rectified pair, with the flip patch
    StereoDepth(StereoDepthArgs),
    /// Colored point cloud and/or Gaussian splats from one depth map
    Reconstruct(ReconstructArgs),
    /// Render images along a Bezier path from per-camera clouds or splats
    Render(RenderArgs),
    /// Convert between .splat, .vsplat and Gaussian .ply
    Pack(PackArgs),
    /// Cluster a session into multi-view frames and apply the session gate
    Sync(SyncArgs),
    /// Run the full pipeline described by a manifest
    Run(RunArgs),
    /// Describe any supported file
    Info(InfoArgs),
    /// Score a rendered image against a target with the fine-tuning loss
    Score(ScoreArgs),
    /// Generate a synthetic capture session
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Args)]
pub struct BilateralArgs {
    /// Filter window radius in pixels
    #[arg(long = "filter-radius", default_value_t = 7)]
    pub radius: usize,
    /// Spatial Gaussian sigma in pixels
    #[arg(long, default_value_t = 7.0)]
    pub sigma_s: f64,
    /// Range sigma on guidance color distance
    #[arg(long, default_value_t = 0.1)]
    pub sigma_r: f64,
    /// Temporal sigma on warped-guidance color distance
    #[arg(long, default_value_t = 0.06)]
    pub sigma_t: f64,
    /// Weight of the flow-warped previous frame; 0 reduces to the spatial filter
    #[arg(long, default_value_t = 0.6)]
    pub lambda_t: f64,
}

#[derive(Debug, Clone, Args)]
pub struct CleanArgs {
    /// Foreground depths above this quantile are dropped as outliers
    #[arg(long, default_value_t = 0.999)]
    pub quantile: f64,
    /// Pixels removed around mask edges
    #[arg(long, default_value_t = 2)]
    pub erode_px: usize,
    /// Low hysteresis threshold for mask edges, as a fraction of the peak gradient
    #[arg(long, default_value_t = 0.1)]
    pub edge_low: f64,
    /// High hysteresis threshold for mask edges, as a fraction of the peak gradient
    #[arg(long, default_value_t = 0.2)]
    pub edge_high: f64,
}

#[derive(Debug, Clone, Args)]
pub struct CloudArgs {
    /// Radius of the outlier filter neighborhood in meters
    #[arg(long, default_value_t = 0.2)]
    pub outlier_radius: f64,
    /// Minimum neighbors (self included) to keep a point
    #[arg(long, default_value_t = 30)]
    pub min_neighbors: usize,
    /// Neighborhood radius for normal estimation in meters
    #[arg(long, default_value_t = 0.1)]
    pub normal_radius: f64,
    /// Maximum neighbors used per normal
    #[arg(long, default_value_t = 30)]
    pub normal_max_nn: usize,
}

#[derive(Debug, Clone, Args)]
pub struct SplatArgs {
    /// Upper bound of splat scales in meters
    #[arg(long, default_value_t = 0.05)]
    pub s_max: f64,
}

#[derive(Debug, Clone, Args)]
pub struct GateArgs {
    /// Largest accepted timestamp spread inside a multi-view frame, in ms
    #[arg(long, default_value_t = 17.0)]
    pub drift_limit_ms: f64,
    /// Capture frame rate used for clustering
    #[arg(long, default_value_t = 30.0)]
    pub fps: f64,
    /// Largest accepted angular acceleration in rad/s^2
    #[arg(long, default_value_t = 0.1)]
    pub angular_limit: f64,
    /// Largest accepted linear acceleration in m/s^2
    #[arg(long, default_value_t = 1e-3)]
    pub linear_limit: f64,
}

#[derive(Debug, Clone, Args)]
pub struct FilterDepthArgs {
    /// Depth frames in order (16-bit PNG, millimeters)
    #[arg(long, required = true, num_args = 1..)]
    pub depth: Vec<PathBuf>,
    /// Color guidance frames, one per depth frame
    #[arg(long, required = true, num_args = 1..)]
    pub color: Vec<PathBuf>,
    /// Foreground masks; enables quantile outlier removal and edge erosion
    #[arg(long, num_args = 1..)]
    pub mask: Vec<PathBuf>,
    /// Backward flow for frames 2..n (.flo), one fewer than depth frames
    #[arg(long, num_args = 1..)]
    pub flow: Vec<PathBuf>,
    /// Spatial filter only, ignoring flow
    #[arg(long)]
    pub spatial_only: bool,
    /// Output directory for filtered_NNNNN.png
    #[arg(long)]
    pub out_dir: PathBuf,
    #[command(flatten)]
    pub bilateral: BilateralArgs,
    #[command(flatten)]
    pub clean: CleanArgs,
}

#[derive(Debug, Clone, Args)]
pub struct StereoDepthArgs {
    /// First (depth-owning) view
    #[arg(long)]
    pub first: PathBuf,
    /// Second view
    #[arg(long)]
    pub second: PathBuf,
    /// Foreground mask of the first view
    #[arg(long)]
    pub mask_first: PathBuf,
    /// Foreground mask of the second view
    #[arg(long)]
    pub mask_second: PathBuf,
    /// Focal length in pixels
    #[arg(long)]
    pub focal: f64,
    /// Distance between the camera centers in meters
    #[arg(long, default_value_t = 0.9)]
    pub baseline: f64,
    /// Block-matching window (odd)
    #[arg(long, default_value_t = 5)]
    pub window: usize,
    /// Search range; defaults to the disparity at 0.5 m
    #[arg(long)]
    pub max_disparity: Option<usize>,
    /// Output depth PNG
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the disparity map (.vdsp)
    #[arg(long)]
    pub disparity_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ReconstructArgs {
    /// Depth map (16-bit PNG, millimeters)
    #[arg(long)]
    pub depth: PathBuf,
    /// Color image
    #[arg(long)]
    pub color: PathBuf,
    /// Foreground mask
    #[arg(long)]
    pub mask: PathBuf,
    /// Rig calibration file
    #[arg(long)]
    pub rig: PathBuf,
    /// Camera id within the rig
    #[arg(long)]
    pub camera: String,
    /// Write the filtered point cloud with normals (.ply)
    #[arg(long)]
    pub points: Option<PathBuf>,
    /// Write the splat frame (.splat)
    #[arg(long)]
    pub splats: Option<PathBuf>,
    /// Write the splat frame as Gaussian PLY
    #[arg(long)]
    pub gaussian_ply: Option<PathBuf>,
    /// Per-pixel splat pre-activations (.spre); a depth-based default otherwise
    #[arg(long)]
    pub preactivations: Option<PathBuf>,
    /// Skip the radius outlier filter
    #[arg(long)]
    pub no_outlier_filter: bool,
    #[command(flatten)]
    pub cloud: CloudArgs,
    #[command(flatten)]
    pub splat: SplatArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RenderSource {
    /// <source>.ply point clouds
    Points,
    /// <source>.splat frames
    Splats,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RigMode {
    /// One depth source per camera
    Sensor,
    /// Ordered adjacent pairs named <first>__<second>
    Stereo,
}

#[derive(Debug, Clone, Args)]
pub struct RenderArgs {
    /// Rig calibration file
    #[arg(long)]
    pub rig: PathBuf,
    /// Cubic Bezier control points: 12 numbers
    #[arg(long)]
    pub path: PathBuf,
    /// Directory with one file per source for a single multi-view frame
    #[arg(long)]
    pub input_dir: PathBuf,
    /// What the input directory holds
    #[arg(long, value_enum, default_value_t = RenderSource::Points)]
    pub source: RenderSource,
    /// How sources are selected
    #[arg(long, value_enum, default_value_t = RigMode::Sensor)]
    pub mode: RigMode,
    /// Number of images along the path
    #[arg(long, default_value_t = 30)]
    pub frames: usize,
    /// Point the virtual camera looks at, as x,y,z
    #[arg(long, value_parser = parse_vec3, default_value = "0,0,0")]
    pub target: Vector3<f64>,
    /// World up direction, as x,y,z
    #[arg(long, value_parser = parse_vec3, default_value = "0,1,0")]
    pub up: Vector3<f64>,
    /// Square point size in pixels for point rendering
    #[arg(long, default_value_t = 2)]
    pub point_size: usize,
    /// Screen-space footprint added to every splat, in px^2
    #[arg(long, default_value_t = 0.3)]
    pub footprint: f64,
    /// Output directory for frame_NNNNN.png
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PackFormat {
    /// Single-frame 32-byte records
    Splat,
    /// Multi-frame stream
    Vsplat,
    /// Gaussian PLY (single frame)
    Ply,
}

#[derive(Debug, Clone, Args)]
pub struct PackArgs {
    /// Inputs in frame order (.splat, .vsplat or Gaussian .ply)
    #[arg(required = true, num_args = 1..)]
    pub inputs: Vec<PathBuf>,
    /// Output file
    #[arg(long)]
    pub out: PathBuf,
    /// Output format; inferred from the extension when omitted
    #[arg(long, value_enum)]
    pub format: Option<PackFormat>,
}

#[derive(Debug, Clone, Args)]
pub struct SyncArgs {
    /// Session manifest
    #[arg(long)]
    pub manifest: PathBuf,
    /// Write the cluster and gate report here as JSON instead of stdout
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub gate: GateArgs,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// Session manifest
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output directory (artifacts/ and run_report.json)
    #[arg(long)]
    pub out: PathBuf,
    /// CPU worker threads
    #[arg(long, env = "VOLCAP_WORKERS", default_value_t = 4)]
    pub cpu_workers: usize,
    /// Accelerator-queue worker threads; half the CPU workers by default
    #[arg(long)]
    pub accel_workers: Option<usize>,
    /// Block-matching window for RGB-only sessions (odd)
    #[arg(long, default_value_t = 5)]
    pub stereo_window: usize,
    /// Minimum view overlap for a stereo pair
    #[arg(long, default_value_t = 0.5)]
    pub min_overlap: f64,
    #[command(flatten)]
    pub bilateral: BilateralArgs,
    #[command(flatten)]
    pub clean: CleanArgs,
    #[command(flatten)]
    pub cloud: CloudArgs,
    #[command(flatten)]
    pub splat: SplatArgs,
    #[command(flatten)]
    pub gate: GateArgs,
}

#[derive(Debug, Clone, Args)]
pub struct InfoArgs {
    /// File to inspect
    pub file: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ScoreArgs {
    /// Reference image
    #[arg(long)]
    pub target: PathBuf,
    /// Rendered image
    #[arg(long)]
    pub rendered: PathBuf,
    /// Pixels entering the Huber term; all pixels when omitted
    #[arg(long)]
    pub mask: Option<PathBuf>,
    /// Splat frame whose scales enter the entropy regularizer
    #[arg(long)]
    pub splats: Option<PathBuf>,
    /// Weight of the Huber term
    #[arg(long, default_value_t = 0.8)]
    pub lambda_l1: f64,
    /// Weight of the structural term
    #[arg(long, default_value_t = 0.2)]
    pub lambda_ssim: f64,
    /// Huber threshold
    #[arg(long, default_value_t = 0.05)]
    pub delta: f64,
    /// Weight of the scale-entropy regularizer
    #[arg(long, default_value_t = 1e-2)]
    pub lambda_ent: f64,
    /// Structural-similarity window side
    #[arg(long, default_value_t = 11)]
    pub window: usize,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
    /// Number of cameras
    #[arg(long, default_value_t = 6)]
    pub cameras: usize,
    /// Frames per camera
    #[arg(long, default_value_t = 30)]
    pub frames: usize,
    /// Image width
    #[arg(long, default_value_t = 64)]
    pub width: usize,
    /// Image height
    #[arg(long, default_value_t = 48)]
    pub height: usize,
    /// Depth source of the session
    #[arg(long, value_enum, default_value_t = RigMode::Sensor)]
    pub mode: RigMode,
    /// Spatial filtering only in the generated manifest
    #[arg(long)]
    pub online: bool,
    /// Random seed
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Constant per-camera timestamp offsets in ms, comma separated
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub offsets_ms: Vec<f64>,
    /// Uniform timestamp jitter amplitude in ms
    #[arg(long, default_value_t = 0.0)]
    pub jitter_ms: f64,
    /// Angular acceleration spike in rad/s^2 injected into the IMU log
    #[arg(long)]
    pub imu_spike: Option<f64>,
}

fn parse_vec3(s: &str) -> Result<Vector3<f64>, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| format!("expected x,y,z, found {s:?}")))
        .collect::<Result<_, _>>()?;
    match v[..] {
        [x, y, z] if v.iter().all(|c| c.is_finite()) => Ok(Vector3::new(x, y, z)),
        _ => Err(format!("expected three finite numbers x,y,z, found {s:?}")),
    }
}
