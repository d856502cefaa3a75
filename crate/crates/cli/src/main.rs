use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use wcluster::bench;
use wcluster::config::{ConfigError, FovPreset, PipelineConfig};
use wcluster::frame_io::{self, CameraIntrinsics, DatasetManifest, SyntheticSceneSpec};
use wcluster::pipeline::{self, PipelineError};
use wcluster::render_export;

/// Invalid configuration or arguments.
const EXIT_CONFIG: u8 = 2;
/// Dataset could not be read, or output could not be written.
const EXIT_DATA: u8 = 3;

#[derive(Parser)]
#[command(name = "wcluster", version, about = "Weighted k-means object detection on RGB-D sequences")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Cluster every frame of a dataset and export PLY clouds and label rasters.
    Run {
        /// Dataset manifest.
        manifest: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Render a synthetic scene description (TOML) into a dataset with ground truth.
    Gen {
        scene: PathBuf,
        #[arg(long, default_value = "scene")]
        out: PathBuf,
        #[arg(long, default_value_t = 512)]
        width: usize,
        #[arg(long, default_value_t = 424)]
        height: usize,
        #[arg(long, default_value = "kinect-v2")]
        fov_preset: FovPreset,
        #[arg(long, default_value_t = 0)]
        rng_seed: u64,
    },
    /// Measure frame rate and memory across cluster counts.
    Bench {
        manifest: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Comma-separated cluster counts, increasing.
        #[arg(long, value_delimiter = ',', default_value = "2,5,10,25,50,100")]
        k_values: Vec<usize>,
        #[arg(long, default_value_t = 3)]
        repetitions: usize,
        /// CSV destination; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score exported label rasters against a dataset's ground truth.
    Score {
        /// Manifest whose frames carry truth rasters.
        manifest: PathBuf,
        /// Directory holding labels_NNNNNN.png from `run`.
        #[arg(long)]
        pred: PathBuf,
    },
    /// Cut out the object under a seed pixel from a label raster.
    Mask {
        /// labels_NNNNNN.png written by `run`.
        labels: PathBuf,
        /// Seed pixel as `row,col`.
        #[arg(long, value_parser = parse_pixel)]
        seed_pixel: (usize, usize),
        #[arg(long, default_value = "mask.png")]
        out: PathBuf,
    },
}

#[derive(Args)]
struct ConfigArgs {
    /// Flat `key = value` configuration file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    pos_scale: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    psi: Option<f64>,
    #[arg(long)]
    inner_iters: Option<usize>,
    #[arg(long)]
    depth_min: Option<f64>,
    #[arg(long)]
    depth_max: Option<f64>,
    #[arg(long)]
    stride: Option<usize>,
    #[arg(long)]
    fov_preset: Option<FovPreset>,
    #[arg(long)]
    rng_seed: Option<u64>,
    #[arg(long, env = "WCLUSTER_THREADS")]
    threads: Option<usize>,
    #[arg(long)]
    freeze_centroids: bool,
    #[arg(long)]
    legacy_eq13: bool,
    #[arg(long)]
    pre_aligned: bool,
}

enum Failure {
    Config(String),
    Data(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Config(c) => c.into(),
            other => Failure::Data(other.to_string()),
        }
    }
}

impl From<bench::BenchError> for Failure {
    fn from(e: bench::BenchError) -> Self {
        match e {
            bench::BenchError::Pipeline(p) => p.into(),
            bench::BenchError::NoClusterCounts
            | bench::BenchError::BadClusterCounts(_)
            | bench::BenchError::NoRepetitions => Failure::Config(e.to_string()),
            other => Failure::Data(other.to_string()),
        }
    }
}

fn parse_pixel(s: &str) -> Result<(usize, usize), String> {
    let (r, c) = s.split_once(',').ok_or("expected `row,col`")?;
    let r = r.trim().parse().map_err(|_| format!("bad row `{r}`"))?;
    let c = c.trim().parse().map_err(|_| format!("bad column `{c}`"))?;
    Ok((r, c))
}

impl ConfigArgs {
    fn resolve(&self) -> Result<PipelineConfig, Failure> {
        let mut cfg = PipelineConfig::default();
        if let Some(path) = &self.config {
            let text = fs::read_to_string(path)
                .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
            cfg.apply_text(&text)?;
        }
        let c = &mut cfg.cluster;
        if let Some(v) = self.k {
            c.k = v;
        }
        if let Some(v) = self.alpha {
            c.alpha = v;
        }
        if let Some(v) = self.pos_scale {
            c.pos_scale = v;
        }
        if let Some(v) = self.gamma {
            c.gamma = v;
        }
        if let Some(v) = self.psi {
            c.psi = v;
        }
        if let Some(v) = self.inner_iters {
            c.inner_iters = v;
        }
        if let Some(v) = self.depth_min {
            cfg.depth_min = v;
        }
        if let Some(v) = self.depth_max {
            cfg.depth_max = v;
        }
        if let Some(v) = self.stride {
            cfg.stride = v;
        }
        if let Some(p) = self.fov_preset {
            cfg.fov = Some(wcluster::config::FovSetting::Preset(p));
        }
        if let Some(v) = self.rng_seed {
            cfg.rng_seed = v;
        }
        if let Some(v) = self.threads {
            cfg.threads = v;
        }
        cfg.freeze_centroids |= self.freeze_centroids;
        cfg.legacy_eq13 |= self.legacy_eq13;
        cfg.pre_aligned |= self.pre_aligned;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn load_manifest(path: &Path) -> Result<DatasetManifest, Failure> {
    DatasetManifest::load(path).map_err(|e| Failure::Data(e.to_string()))
}

fn run(manifest: &Path, cfg: &ConfigArgs, out: &Path) -> Result<(), Failure> {
    let config = cfg.resolve()?;
    let manifest = load_manifest(manifest)?;
    pipeline::run(&config, &manifest, out, |log| {
        println!(
            "frame {:6}  tau {:6}  {:8.2} ms  valid {:7}  relabeled {:7}",
            log.frame_index,
            log.tau,
            log.elapsed.as_secs_f64() * 1e3,
            log.valid_points,
            log.label_changes
        );
    })?;
    Ok(())
}

fn gen(
    scene: &Path,
    out: &Path,
    width: usize,
    height: usize,
    preset: FovPreset,
    seed: u64,
) -> Result<(), Failure> {
    let text = fs::read_to_string(scene).map_err(|e| Failure::Config(format!("{}: {e}", scene.display())))?;
    let spec = SyntheticSceneSpec::from_toml(&text).map_err(|e| Failure::Config(e.to_string()))?;
    let (fov_x, fov_y) = preset.fov();
    let intrinsics = CameraIntrinsics {
        fov_x,
        fov_y,
        ..CameraIntrinsics::kinect_v2()
    }
    .with_resolution(width, height);
    let (frames, truth) = frame_io::generate_synthetic_scene(&spec, &intrinsics, seed)
        .map_err(|e| Failure::Config(e.to_string()))?;
    let manifest = frame_io::write_dataset(out, &intrinsics, &frames, Some(&truth))
        .map_err(|e| Failure::Data(e.to_string()))?;
    println!(
        "wrote {} frames to {}",
        manifest.len(),
        out.join("manifest.txt").display()
    );
    Ok(())
}

fn bench_cmd(
    manifest: &Path,
    cfg: &ConfigArgs,
    k_values: &[usize],
    repetitions: usize,
    out: Option<&Path>,
) -> Result<(), Failure> {
    let config = cfg.resolve()?;
    let manifest = load_manifest(manifest)?;
    let report = bench::sweep_k(&manifest, k_values, &config, repetitions)?;
    eprintln!("machine: {}", report.machine);
    let csv = report.to_csv();
    match out {
        Some(p) => fs::write(p, csv).map_err(|e| Failure::Data(format!("{}: {e}", p.display())))?,
        None => print!("{csv}"),
    }
    Ok(())
}

fn score(manifest: &Path, pred: &Path) -> Result<(), Failure> {
    let manifest = load_manifest(manifest)?;
    let data = |e: frame_io::FrameIoError| Failure::Data(e.to_string());
    let mut labels = Vec::new();
    let mut truth = Vec::new();
    for i in 0..manifest.len() {
        let t = manifest
            .read_labels(i)
            .map_err(data)?
            .ok_or_else(|| Failure::Data(format!("frame {i} has no ground truth")))?;
        truth.push(t);
        labels.push(frame_io::read_label_png(&pipeline::labels_path(pred, i)).map_err(data)?);
    }
    let report = bench::score_against_truth(&labels, &truth)?;
    println!("frame,accuracy,evaluated");
    for (i, f) in report.frames.iter().enumerate() {
        println!("{i},{:.4},{}", f.accuracy, f.evaluated);
    }
    println!("mean,{:.4},", report.mean_accuracy);
    Ok(())
}

fn mask(labels: &Path, seed: (usize, usize), out: &Path) -> Result<(), Failure> {
    let raster = frame_io::read_label_png(labels).map_err(|e| Failure::Data(e.to_string()))?;
    let mask = render_export::extract_object_mask(&raster, seed).map_err(|e| Failure::Config(e.to_string()))?;
    frame_io::write_label_png(out, &mask.to_png_raster()).map_err(|e| Failure::Data(e.to_string()))?;
    println!(
        "cluster {} at ({}, {}): {} pixels -> {}",
        mask.cluster_id,
        seed.0,
        seed.1,
        mask.area(),
        out.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { manifest, cfg, out } => run(manifest, cfg, out),
        Command::Gen {
            scene,
            out,
            width,
            height,
            fov_preset,
            rng_seed,
        } => gen(scene, out, *width, *height, *fov_preset, *rng_seed),
        Command::Bench {
            manifest,
            cfg,
            k_values,
            repetitions,
            out,
        } => bench_cmd(manifest, cfg, k_values, *repetitions, out.as_deref()),
        Command::Score { manifest, pred } => score(manifest, pred),
        Command::Mask {
            labels,
            seed_pixel,
            out,
        } => mask(labels, *seed_pixel, out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Data(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_DATA)
        }
    }
}
