//! Frame rate and memory versus cluster count, and segmentation quality
//! against synthetic ground truth.

use std::fmt::Write as _;
use std::time::Instant;

use pathfinding::prelude::{kuhn_munkres, Matrix};
use thiserror::Error;

use crate::config::PipelineConfig;
use crate::frame_io::{self, DatasetManifest, LabelRaster, RgbdFrame, BACKGROUND_LABEL};
use crate::pipeline::{Pipeline, PipelineError};
use crate::render_export::ObjectMask;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("no cluster counts to sweep")]
    NoClusterCounts,
    #[error("cluster counts must be strictly increasing and within [2, 100], got {0:?}")]
    BadClusterCounts(Vec<usize>),
    #[error("repetitions must be at least 1")]
    NoRepetitions,
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error("frame {frame}: prediction is {pred_w}x{pred_h}, truth is {truth_w}x{truth_h}")]
    DimensionMismatch {
        frame: usize,
        pred_w: usize,
        pred_h: usize,
        truth_w: usize,
        truth_h: usize,
    },
    #[error("{pred} predicted frames but {truth} truth frames")]
    FrameCount { pred: usize, truth: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub k: usize,
    pub fps_mean: f64,
    pub fps_std: f64,
    /// Largest resident set size seen at iteration boundaries, bytes.
    pub peak_mem_bytes: u64,
    pub threads: usize,
    pub iterations: u64,
    /// Bytes of per-point weight storage.
    pub weight_bytes: usize,
    /// Total time spent processing frames, seconds.
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub machine: String,
}

impl BenchReport {
    /// `k,fps_mean,fps_std,peak_mem_bytes,threads`, one row per k.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,fps_mean,fps_std,peak_mem_bytes,threads\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{:.4},{:.4},{},{}",
                r.k, r.fps_mean, r.fps_std, r.peak_mem_bytes, r.threads
            );
        }
        out
    }
}

/// Current resident set size in bytes, 0 where unavailable.
pub fn resident_bytes() -> u64 {
    #[cfg(target_os = "linux")]
    {
        if let Ok(status) = std::fs::read_to_string("/proc/self/status") {
            for line in status.lines() {
                if let Some(rest) = line.strip_prefix("VmRSS:") {
                    let kb: u64 = rest
                        .trim()
                        .trim_end_matches("kB")
                        .trim()
                        .parse()
                        .unwrap_or(0);
                    return kb * 1024;
                }
            }
        }
    }
    0
}

fn machine_descriptor(threads: usize) -> String {
    let cpus = std::thread::available_parallelism().map_or(1, |n| n.get());
    format!(
        "{}-{} cpus={} threads={}",
        std::env::consts::OS,
        std::env::consts::ARCH,
        cpus,
        threads
    )
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Run the full pipeline over preloaded `frames` once per repetition for
/// each `k`. Only processing time is measured.
pub fn sweep_frames(
    frames: &[RgbdFrame],
    intrinsics: &frame_io::CameraIntrinsics,
    k_values: &[usize],
    base: &PipelineConfig,
    repetitions: usize,
) -> Result<BenchReport, BenchError> {
    if k_values.is_empty() {
        return Err(BenchError::NoClusterCounts);
    }
    if k_values.windows(2).any(|w| w[0] >= w[1]) || k_values.iter().any(|k| !(2..=100).contains(k)) {
        return Err(BenchError::BadClusterCounts(k_values.to_vec()));
    }
    if repetitions == 0 {
        return Err(BenchError::NoRepetitions);
    }
    let mut rows = Vec::with_capacity(k_values.len());
    for &k in k_values {
        let mut cfg = base.clone();
        cfg.cluster.k = k;
        let mut fps = Vec::new();
        let mut peak = 0u64;
        let mut iterations = 0;
        let mut weight_bytes = 0;
        let mut seconds = 0.0;
        for _ in 0..repetitions {
            let mut pipeline = Pipeline::new(cfg.clone(), intrinsics)?;
            for frame in frames {
                let t = Instant::now();
                let out = pipeline.process(frame)?;
                let dt = t.elapsed().as_secs_f64();
                seconds += dt;
                fps.push(1.0 / dt.max(1e-9));
                peak = peak.max(resident_bytes());
                iterations = out.tau;
            }
            weight_bytes = pipeline.state().map_or(0, |s| s.storage_bytes());
        }
        let (fps_mean, fps_std) = mean_std(&fps);
        log::info!("k={k}: {fps_mean:.2} fps, {weight_bytes} weight bytes");
        rows.push(BenchRow {
            k,
            fps_mean,
            fps_std,
            peak_mem_bytes: peak,
            threads: cfg.threads,
            iterations,
            weight_bytes,
            seconds,
        });
    }
    Ok(BenchReport {
        rows,
        machine: machine_descriptor(base.threads),
    })
}

/// Load every frame of `manifest`, then [`sweep_frames`].
pub fn sweep_k(
    manifest: &DatasetManifest,
    k_values: &[usize],
    base: &PipelineConfig,
    repetitions: usize,
) -> Result<BenchReport, BenchError> {
    if k_values.is_empty() {
        return Err(BenchError::NoClusterCounts);
    }
    let mut manifest = manifest.clone();
    manifest.pre_aligned |= base.pre_aligned;
    let frames = (0..manifest.len())
        .map(|i| frame_io::read_frame_pair(&manifest, i))
        .collect::<Result<Vec<_>, _>>()
        .map_err(PipelineError::from)?;
    sweep_frames(&frames, &manifest.intrinsics, k_values, base, repetitions)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameQuality {
    /// Fraction of object pixels labeled with their matched cluster.
    pub accuracy: f64,
    /// `(truth label, matched cluster, IoU)` for each truth object.
    pub iou: Vec<(u8, Option<u8>, f64)>,
    /// Object pixels scored.
    pub evaluated: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QualityReport {
    pub frames: Vec<FrameQuality>,
    pub mean_accuracy: f64,
}

fn distinct(values: impl Iterator<Item = u8>) -> Vec<u8> {
    let mut seen = [false; 256];
    values.for_each(|v| seen[v as usize] = true);
    (0..=255u8).filter(|v| seen[*v as usize]).collect()
}

/// Best-match accuracy of one predicted label raster. Pixels whose truth is
/// [`BACKGROUND_LABEL`] are not scored; unlabeled predictions count as
/// misses.
pub fn score_frame(pred: &LabelRaster, truth: &LabelRaster) -> Result<FrameQuality, BenchError> {
    if pred.width != truth.width || pred.height != truth.height {
        return Err(BenchError::DimensionMismatch {
            frame: 0,
            pred_w: pred.width,
            pred_h: pred.height,
            truth_w: truth.width,
            truth_h: truth.height,
        });
    }
    let objects = distinct(truth.data.iter().copied().filter(|t| *t != BACKGROUND_LABEL));
    let clusters = distinct(pred.data.iter().copied().filter(|p| *p != BACKGROUND_LABEL));
    let evaluated = truth.data.iter().filter(|t| **t != BACKGROUND_LABEL).count();
    if evaluated == 0 {
        log::warn!("no object pixels in ground truth; accuracy defined as 1.0");
        return Ok(FrameQuality {
            accuracy: 1.0,
            iou: Vec::new(),
            evaluated: 0,
        });
    }

    let n = objects.len().max(clusters.len());
    let obj_idx = |t: u8| objects.binary_search(&t).ok();
    let cl_idx = |p: u8| clusters.binary_search(&p).ok();
    // rows: truth objects, columns: clusters, padded square
    let mut counts = Matrix::new(n, n, 0i64);
    let mut cluster_sizes = vec![0usize; clusters.len()];
    let mut object_sizes = vec![0usize; objects.len()];
    for (&p, &t) in pred.data.iter().zip(&truth.data) {
        let ci = cl_idx(p);
        let oi = obj_idx(t);
        if let Some(ci) = ci {
            cluster_sizes[ci] += 1;
        }
        if let Some(oi) = oi {
            object_sizes[oi] += 1;
            if let Some(ci) = ci {
                counts[(oi, ci)] += 1;
            }
        }
    }
    let (matched, assignment) = kuhn_munkres(&counts);
    let iou = objects
        .iter()
        .enumerate()
        .map(|(oi, &t)| {
            let ci = assignment[oi];
            if ci >= clusters.len() {
                return (t, None, 0.0);
            }
            let inter = counts[(oi, ci)] as f64;
            let union = (object_sizes[oi] + cluster_sizes[ci]) as f64 - inter;
            (t, Some(clusters[ci]), inter / union)
        })
        .collect();
    Ok(FrameQuality {
        accuracy: matched as f64 / evaluated as f64,
        iou,
        evaluated,
    })
}

/// Score a sequence of predicted label rasters against ground truth.
pub fn score_against_truth(
    labels: &[LabelRaster],
    truth: &[LabelRaster],
) -> Result<QualityReport, BenchError> {
    if labels.len() != truth.len() {
        return Err(BenchError::FrameCount {
            pred: labels.len(),
            truth: truth.len(),
        });
    }
    let frames = labels
        .iter()
        .zip(truth)
        .enumerate()
        .map(|(i, (p, t))| {
            score_frame(p, t).map_err(|e| match e {
                BenchError::DimensionMismatch {
                    pred_w,
                    pred_h,
                    truth_w,
                    truth_h,
                    ..
                } => BenchError::DimensionMismatch {
                    frame: i,
                    pred_w,
                    pred_h,
                    truth_w,
                    truth_h,
                },
                other => other,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mean_accuracy = if frames.is_empty() {
        1.0
    } else {
        frames.iter().map(|f| f.accuracy).sum::<f64>() / frames.len() as f64
    };
    Ok(QualityReport {
        frames,
        mean_accuracy,
    })
}

/// Intersection over union of a mask with the truth pixels of `object`.
pub fn mask_iou(mask: &ObjectMask, truth: &LabelRaster, object: u8) -> f64 {
    let (mut inter, mut union) = (0usize, 0usize);
    for (m, t) in mask.mask.data.iter().zip(&truth.data) {
        let a = *m == 1;
        let b = *t == object;
        inter += usize::from(a && b);
        union += usize::from(a || b);
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}
