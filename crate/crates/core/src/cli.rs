//! Command-line front end. `run` returns the process exit code: 0 on
//! success, 1 on usage errors, 2 on runtime errors.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use crate::geometry::{rot_y, RigidTransform};
use crate::metrics::{self, CodeVector, MetricRow, MetricsError, PoseSequence};
use crate::optimizer::{invert_scene_with, write_loss_trace, InversionConfig, LossError};
use crate::pnp::{reprojection_error, solve_epnp, KeypointCorrespondence, PnpError};
use crate::render::{render, RenderConfig, RenderError};
use crate::scene_io::{
    load_scene, load_targets, poses_from_rows, read_depth, read_json, save_scene, synth_scene, write_depth,
    write_image, write_json, Keypoints2dFile, PartLayout, SceneError, SynthSpec, TrackFile,
};
use crate::skinning::{PartPoseSet, PosesFile};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Pnp(#[from] PnpError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Parser)]
#[command(name = "volanim", version, about = "Voxel volume animation toolkit")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic scene with a ground-truth pose track.
    Synth(SynthArgs),
    /// Render a scene under one set of part poses.
    Render(RenderArgs),
    /// Estimate part poses from 2D keypoints with EPnP.
    EstimatePose(EstimateArgs),
    /// Render a pose track, optionally from a novel view.
    Animate(AnimateArgs),
    /// Fit a volume to target views.
    Invert(InvertArgs),
    /// Compare two maps or code vectors.
    Metrics(MetricsArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Layout {
    OneHot,
    Soft,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 16)]
    size: usize,
    #[arg(long, default_value_t = 2)]
    parts: usize,
    #[arg(long, default_value_t = 4)]
    blobs: usize,
    #[arg(long, value_enum, default_value = "one-hot")]
    layout: Layout,
    #[arg(long, default_value_t = 8)]
    frames: usize,
    #[arg(long, default_value_t = 64)]
    image_size: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct RenderFlags {
    #[arg(long, default_value_t = 128)]
    samples: usize,
    /// Leave out the background plate.
    #[arg(long)]
    no_bg: bool,
    /// Jitter samples inside their bins.
    #[arg(long)]
    jitter: bool,
    #[arg(long, default_value_t = 0.0)]
    density_noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl RenderFlags {
    fn config(&self) -> RenderConfig {
        RenderConfig {
            n_samples: self.samples,
            jitter: self.jitter,
            density_noise_sigma: self.density_noise,
            include_background: !self.no_bg,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Args)]
struct RenderArgs {
    #[arg(long)]
    scene: PathBuf,
    /// Part poses; identity when omitted.
    #[arg(long)]
    poses: Option<PathBuf>,
    #[arg(long)]
    out_prefix: String,
    #[command(flatten)]
    render: RenderFlags,
}

#[derive(Debug, Args)]
struct EstimateArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    keypoints: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct AnimateArgs {
    #[arg(long)]
    scene: PathBuf,
    /// Pose track; the scene's own track when omitted.
    #[arg(long)]
    driving_poses: Option<PathBuf>,
    /// Turn the object by this yaw (radians) about the cube center.
    #[arg(long, allow_hyphen_values = true)]
    novel_yaw: Option<f64>,
    /// Keep each part at a constant distance from the camera.
    #[arg(long)]
    filter_distances: bool,
    #[arg(long, default_value = "frame")]
    out_prefix: String,
    #[command(flatten)]
    render: RenderFlags,
}

#[derive(Debug, Args)]
struct InvertArgs {
    /// Directory holding targets.json and the view images.
    #[arg(long)]
    targets: PathBuf,
    #[arg(long)]
    init: PathBuf,
    #[arg(long, default_value_t = 3000)]
    steps: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long, default_value_t = crate::optimizer::DEFAULT_LR)]
    lr: f64,
    #[arg(long, default_value_t = 0.5)]
    exploration_noise: f64,
    /// Regularize density and part logits towards the initial volume.
    #[arg(long)]
    geo_reference: bool,
    #[command(flatten)]
    render: RenderFlags,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MetricKind {
    Pearson,
    Ayd,
    Asc,
    Apc,
}

#[derive(Debug, Args)]
struct MetricsArgs {
    /// PFM map, or a JSON array of numbers.
    #[arg(long)]
    pred: PathBuf,
    #[arg(long = "ref")]
    reference: PathBuf,
    /// Foreground mask (nonzero = used), pearson only.
    #[arg(long)]
    mask: Option<PathBuf>,
    #[arg(long, value_enum)]
    kind: MetricKind,
    /// Yaw change applied between reference and prediction, ayd only.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    yaw_change: f64,
}

/// Parses `argv` (including the program name) and runs the command.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.threads {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| execute(cli.command)),
            Err(e) => Err(CliError::Invalid(e.to_string())),
        },
        None => execute(cli.command),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn execute(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Synth(a) => synth(a),
        Command::Render(a) => render_cmd(a),
        Command::EstimatePose(a) => estimate(a),
        Command::Animate(a) => animate(a),
        Command::Invert(a) => invert(a),
        Command::Metrics(a) => metrics_cmd(a),
    }
}

fn synth(a: SynthArgs) -> Result<(), CliError> {
    let spec = SynthSpec {
        size: a.size,
        n_parts: a.parts,
        blobs: a.blobs.max(a.parts),
        layout: match a.layout {
            Layout::OneHot => PartLayout::OneHot,
            Layout::Soft => PartLayout::Soft,
        },
        frames: a.frames,
        image_size: a.image_size,
        ..SynthSpec::default()
    };
    let scene = synth_scene(a.seed, &spec)?;
    save_scene(&scene, &a.out)?;
    Ok(())
}

fn read_poses(path: &Path) -> Result<PartPoseSet, CliError> {
    let file: PosesFile = read_json(path)?;
    Ok(poses_from_rows(&file.poses)?)
}

fn write_render(prefix: &str, out: &crate::render::RenderOutput) -> Result<(), CliError> {
    write_image(&out.rgb, Path::new(&format!("{prefix}.rgb.ppm")))?;
    write_depth(&out.depth, Path::new(&format!("{prefix}.depth.pfm")))?;
    write_depth(&out.occupancy, Path::new(&format!("{prefix}.occ.pfm")))?;
    for p in 0..out.parts.channels {
        write_depth(&out.parts.channel(p), Path::new(&format!("{prefix}.parts.{p}.pfm")))?;
    }
    Ok(())
}

fn render_cmd(a: RenderArgs) -> Result<(), CliError> {
    let scene = load_scene(&a.scene)?;
    let poses = match &a.poses {
        Some(p) => read_poses(p)?,
        None => PartPoseSet::identity(scene.n_parts()),
    };
    let out = render(&scene.volume, &poses, &scene.camera, &scene.cube, &a.render.config())?;
    write_render(&a.out_prefix, &out)
}

fn estimate(a: EstimateArgs) -> Result<(), CliError> {
    let scene = load_scene(&a.scene)?;
    let k2d: Keypoints2dFile = read_json(&a.keypoints)?;
    let k2d = k2d.to_points();
    if k2d.len() != scene.n_parts() {
        return Err(CliError::Invalid(format!(
            "{} keypoint sets for {} parts",
            k2d.len(),
            scene.n_parts()
        )));
    }
    let mut poses = Vec::with_capacity(k2d.len());
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    let _ = writeln!(out, "part,reprojection_error");
    for (p, (k3d, obs)) in scene.keypoints.iter().zip(k2d).enumerate() {
        let corr = KeypointCorrespondence::new(k3d.clone(), obs)?;
        let pose = solve_epnp(&corr, &scene.camera)?;
        let err = reprojection_error(&corr, &pose, &scene.camera)?;
        let _ = writeln!(out, "{p},{err:e}");
        poses.push(pose);
    }
    write_json(
        &a.out,
        &PosesFile {
            poses: PartPoseSet::new(poses).to_rows(),
        },
    )?;
    Ok(())
}

fn animate(a: AnimateArgs) -> Result<(), CliError> {
    let scene = load_scene(&a.scene)?;
    let mut track = match &a.driving_poses {
        Some(p) => read_json::<TrackFile>(p)?.to_track()?,
        None => scene
            .pose_track
            .clone()
            .ok_or_else(|| CliError::Invalid("scene has no pose track; pass --driving-poses".into()))?,
    };
    if a.filter_distances {
        let seq = PoseSequence::new(track)?;
        track = metrics::filter_part_distances(&seq, &scene.cube)?.into_frames();
    }
    if let Some(yaw) = a.novel_yaw {
        let turn = RigidTransform::about_point(rot_y(yaw), scene.cube.center());
        track = track.iter().map(|f| f.premultiply(&turn)).collect();
    }
    let cfg = a.render.config();
    for (f, poses) in track.iter().enumerate() {
        let out = render(&scene.volume, poses, &scene.camera, &scene.cube, &cfg)?;
        write_render(&format!("{}.{f:04}", a.out_prefix), &out)?;
    }
    Ok(())
}

fn invert(a: InvertArgs) -> Result<(), CliError> {
    let scene = load_scene(&a.init)?;
    let targets = load_targets(&a.targets)?;
    let cfg = InversionConfig {
        steps: a.steps,
        lr: a.lr,
        exploration_noise: a.exploration_noise,
        render: a.render.config(),
        seed: a.render.seed,
        ..InversionConfig::default()
    };
    let reference = a.geo_reference.then(|| scene.volume.clone());
    let result = invert_scene_with(
        &targets,
        &scene.volume,
        &scene.camera,
        &scene.cube,
        &cfg,
        reference.as_ref(),
        |_| {},
    )?;
    if let Some(path) = &a.trace {
        let file = std::fs::File::create(path).map_err(|e| CliError::Io {
            path: path.clone(),
            source: e,
        })?;
        write_loss_trace(std::io::BufWriter::new(file), &result.trace).map_err(|e| CliError::Io {
            path: path.clone(),
            source: e,
        })?;
    }
    let mut fitted = scene;
    fitted.volume = result.volume;
    save_scene(&fitted, &a.out)?;
    Ok(())
}

fn read_values(path: &Path) -> Result<Vec<f64>, CliError> {
    if path.extension().is_some_and(|e| e == "json") {
        Ok(read_json::<Vec<f64>>(path)?)
    } else {
        Ok(read_depth(path)?.data)
    }
}

fn metrics_cmd(a: MetricsArgs) -> Result<(), CliError> {
    let pred = read_values(&a.pred)?;
    let reference = read_values(&a.reference)?;
    let row = match a.kind {
        MetricKind::Pearson => {
            let mask: Option<Vec<bool>> = match &a.mask {
                Some(m) => Some(read_values(m)?.iter().map(|&v| v != 0.0).collect()),
                None => None,
            };
            let n = mask.as_ref().map_or(pred.len(), |m| m.iter().filter(|&&b| b).count());
            MetricRow {
                metric: "pearson".into(),
                value: metrics::pearson(&pred, &reference, mask.as_deref())?,
                n,
            }
        }
        MetricKind::Ayd => {
            if pred.len() != reference.len() || pred.is_empty() {
                return Err(CliError::Invalid("ayd needs equally long, non-empty angle lists".into()));
            }
            let total: f64 = pred.iter().zip(&reference).map(|(d, r)| metrics::ayd(*d, *r, a.yaw_change)).sum();
            MetricRow {
                metric: "ayd".into(),
                value: total / pred.len() as f64,
                n: pred.len(),
            }
        }
        MetricKind::Asc | MetricKind::Apc => {
            let (p, r) = (CodeVector::new(pred)?, CodeVector::new(reference)?);
            let (name, value) = match a.kind {
                MetricKind::Asc => ("asc", metrics::asc(&p, &r)?),
                _ => ("apc", metrics::apc(&p, &r)?),
            };
            MetricRow {
                metric: name.into(),
                value,
                n: p.len(),
            }
        }
    };
    metrics::write_metric_rows(std::io::stdout().lock(), &[row]).map_err(|e| CliError::Io {
        path: PathBuf::from("<stdout>"),
        source: e,
    })
}
