//! Frame-by-frame driver: preprocess, cluster, color, export.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::cluster::{
    self, Centroid, ClusterError, IterationClock, StepOptions, StepSummary, WeightState,
};
use crate::config::{ConfigError, PipelineConfig};
use crate::frame_io::{self, CameraIntrinsics, DatasetManifest, FrameIoError, LabelRaster, RgbdFrame};
use crate::preprocess::{self, OrganizedCloud, PreprocessError, PreprocessOptions, Projection};
use crate::render_export::{self, ColoredCloud, ExportError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Dataset(#[from] FrameIoError),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Export(#[from] ExportError),
    #[error("frame {index} is {found_w}x{found_h}, expected {expected_w}x{expected_h}")]
    FrameSize {
        index: usize,
        expected_w: usize,
        expected_h: usize,
        found_w: usize,
        found_h: usize,
    },
    #[error("cannot build thread pool: {0}")]
    ThreadPool(#[from] rayon::ThreadPoolBuildError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Everything produced for one frame.
#[derive(Debug, Clone)]
pub struct FrameOutput {
    pub frame_index: usize,
    pub cloud: OrganizedCloud,
    pub colored: ColoredCloud,
    pub labels: LabelRaster,
    pub summary: StepSummary,
    pub tau: u64,
    /// Wall time spent in [`Pipeline::process`].
    pub elapsed: Duration,
}

/// Streaming clustering state for one camera.
pub struct Pipeline {
    config: PipelineConfig,
    intrinsics: CameraIntrinsics,
    preprocess: PreprocessOptions,
    state: Option<WeightState>,
    centroids: Vec<Centroid>,
    clock: IterationClock,
    pool: rayon::ThreadPool,
}

impl Pipeline {
    /// `intrinsics` are the dataset's; the configured FOV override is applied
    /// here.
    pub fn new(config: PipelineConfig, intrinsics: &CameraIntrinsics) -> Result<Self, PipelineError> {
        config.validate()?;
        let intrinsics = config.intrinsics(intrinsics);
        intrinsics.validate()?;
        let projection = if config.legacy_eq13 {
            Projection::legacy(&intrinsics)
        } else {
            Projection::new(&intrinsics)
        };
        let preprocess = PreprocessOptions {
            projection,
            range: config.depth_range()?,
            stride: config.stride,
        };
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.threads)
            .build()?;
        Ok(Self {
            config,
            intrinsics,
            preprocess,
            state: None,
            centroids: Vec::new(),
            clock: IterationClock::default(),
            pool,
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn intrinsics(&self) -> &CameraIntrinsics {
        &self.intrinsics
    }

    pub fn state(&self) -> Option<&WeightState> {
        self.state.as_ref()
    }

    pub fn centroids(&self) -> &[Centroid] {
        &self.centroids
    }

    pub fn clock(&self) -> IterationClock {
        self.clock
    }

    /// Preprocess `frame` into the organized cloud the clusterer consumes.
    pub fn preprocess(&self, frame: &RgbdFrame) -> Result<OrganizedCloud, PipelineError> {
        let (w, h) = (self.intrinsics.depth_width, self.intrinsics.depth_height);
        if frame.width() != w || frame.height() != h {
            return Err(PipelineError::FrameSize {
                index: frame.frame_index,
                expected_w: w,
                expected_h: h,
                found_w: frame.width(),
                found_h: frame.height(),
            });
        }
        Ok(self.pool.install(|| preprocess::preprocess_frame(frame, &self.preprocess))?)
    }

    /// Run one frame through the clusterer. Centroids are seeded from the
    /// first frame.
    pub fn process(&mut self, frame: &RgbdFrame) -> Result<FrameOutput, PipelineError> {
        let start = Instant::now();
        let cloud = self.preprocess(frame)?;
        let params = self.config.cluster;
        let state = match &mut self.state {
            Some(s) => s,
            slot @ None => {
                self.centroids = cluster::seed_kmeanspp(&cloud.points, &params, self.config.rng_seed)?;
                slot.insert(WeightState::new(cloud.width, cloud.height, params.k))
            }
        };
        let opts = StepOptions {
            freeze_centroids: self.config.freeze_centroids,
        };
        let centroids = &mut self.centroids;
        let clock = &mut self.clock;
        let summary = self
            .pool
            .install(|| cluster::step_frame(&cloud, state, centroids, clock, &params, opts))?;
        let palette: Vec<[u8; 3]> = self.centroids.iter().map(|c| c.display).collect();
        let colors = render_export::blend_colors(state, &palette);
        let colored = render_export::colored_cloud(&cloud, &colors);
        let labels = render_export::label_raster(state)?;
        Ok(FrameOutput {
            frame_index: frame.frame_index,
            cloud,
            colored,
            labels,
            summary,
            tau: self.clock.tau,
            elapsed: start.elapsed(),
        })
    }
}

pub fn ply_path(out_dir: &Path, index: usize) -> PathBuf {
    out_dir.join(format!("frame_{index:06}.ply"))
}

pub fn labels_path(out_dir: &Path, index: usize) -> PathBuf {
    out_dir.join(format!("labels_{index:06}.png"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameLog {
    pub frame_index: usize,
    pub tau: u64,
    pub elapsed: Duration,
    pub label_changes: usize,
    pub valid_points: usize,
}

/// Process every frame of `manifest` in order, writing
/// `frame_NNNNNN.ply` and `labels_NNNNNN.png` into `out_dir`. `on_frame`
/// sees each frame's log line as it completes.
pub fn run(
    config: &PipelineConfig,
    manifest: &DatasetManifest,
    out_dir: &Path,
    mut on_frame: impl FnMut(&FrameLog),
) -> Result<Vec<FrameLog>, PipelineError> {
    config.validate()?;
    let mut manifest = manifest.clone();
    manifest.pre_aligned |= config.pre_aligned;
    let mut pipeline = Pipeline::new(config.clone(), &manifest.intrinsics)?;
    fs::create_dir_all(out_dir).map_err(|source| PipelineError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    let mut logs = Vec::with_capacity(manifest.len());
    for index in 0..manifest.len() {
        let frame = frame_io::read_frame_pair(&manifest, index)?;
        let out = pipeline.process(&frame)?;
        render_export::export_ply(&out.colored, &ply_path(out_dir, index))?;
        frame_io::write_label_png(&labels_path(out_dir, index), &out.labels)?;
        let log = FrameLog {
            frame_index: index,
            tau: out.tau,
            elapsed: out.elapsed,
            label_changes: out.summary.label_changes,
            valid_points: out.summary.valid_points,
        };
        on_frame(&log);
        logs.push(log);
    }
    Ok(logs)
}
