//! Weighted k-means over organized clouds with per-pixel cumulative
//! membership weights.
//!
//! Every grid cell keeps `k` raw accumulators `delta`. Each iteration a valid
//! point's nearest centroid under the hybrid metric [`similarity`] wins, its
//! accumulator grows by `psi`, the accumulators are L1-normalized into `mu`
//! and the point is labeled with the heaviest cluster. Weights persist across
//! frames so a label only changes once a new cluster has out-won the old one.

use std::sync::OnceLock;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::preprocess::{CloudPoint, OrganizedCloud};

/// Number of distinct display colors available, and so the largest `k`.
pub const PALETTE_SIZE: usize = 100;

/// Cells per partial sum in the centroid reduction. Fixed so the summation
/// order does not depend on the thread count.
const REDUCE_CHUNK: usize = 1024;

/// Below this norm a mean normal is treated as absent.
const MIN_MEAN_NORMAL: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParamError {
    #[error("cluster count k = {0} must lie in [2, {PALETTE_SIZE}]")]
    ClusterCount(usize),
    #[error("color scale alpha = {0} must satisfy 0 < alpha < 1")]
    ColorScale(f64),
    #[error("position scale pos_scale = {0} must be positive")]
    PositionScale(f64),
    #[error("position and color scales must satisfy pos_scale + alpha <= 1 (got {pos_scale} + {alpha})")]
    ScaleSum { pos_scale: f64, alpha: f64 },
    #[error("normal scale gamma = {0} must be >= 0")]
    NormalScale(f64),
    #[error("weight increment psi = {0} must satisfy 0 < psi <= 1")]
    WeightIncrement(f64),
    #[error("inner_iters must be at least 1")]
    InnerIterations,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClusterError {
    #[error("need at least {k} valid points to seed {k} clusters, found {found}")]
    NotEnoughPoints { k: usize, found: usize },
    #[error("weight state is {state_w}x{state_h} but the cloud is {cloud_w}x{cloud_h}")]
    GridMismatch {
        state_w: usize,
        state_h: usize,
        cloud_w: usize,
        cloud_h: usize,
    },
    #[error("expected {expected} centroids, got {found}")]
    CentroidCount { expected: usize, found: usize },
}

/// Scales of the hybrid metric and the weight update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusterParams {
    pub k: usize,
    /// Color scale.
    pub alpha: f64,
    /// Position scale.
    pub pos_scale: f64,
    /// Normal-angle scale.
    pub gamma: f64,
    /// Weight increment per win.
    pub psi: f64,
    /// Iterations per frame.
    pub inner_iters: usize,
}

impl Default for ClusterParams {
    fn default() -> Self {
        Self {
            k: 7,
            alpha: 0.01,
            pos_scale: 0.99,
            gamma: 0.001,
            psi: 1.0,
            inner_iters: 1,
        }
    }
}

/// Slack on `pos_scale + alpha <= 1` so `pos_scale = 1 - alpha` always passes.
pub const SCALE_SUM_SLACK: f64 = 1e-12;

impl ClusterParams {
    pub fn validate(&self) -> Result<(), ParamError> {
        if !(2..=PALETTE_SIZE).contains(&self.k) {
            return Err(ParamError::ClusterCount(self.k));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(ParamError::ColorScale(self.alpha));
        }
        if !(self.pos_scale > 0.0) {
            return Err(ParamError::PositionScale(self.pos_scale));
        }
        if !(self.pos_scale + self.alpha <= 1.0 + SCALE_SUM_SLACK) {
            return Err(ParamError::ScaleSum {
                pos_scale: self.pos_scale,
                alpha: self.alpha,
            });
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(ParamError::NormalScale(self.gamma));
        }
        if !(self.psi > 0.0 && self.psi <= 1.0) {
            return Err(ParamError::WeightIncrement(self.psi));
        }
        if self.inner_iters == 0 {
            return Err(ParamError::InnerIterations);
        }
        Ok(())
    }
}

/// Cluster representative in the 9-D point feature space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Centroid {
    pub position: Vector3<f64>,
    /// RGB in [0, 255].
    pub color: Vector3<f64>,
    pub normal: Option<Vector3<f64>>,
    /// Color used when rendering this cluster.
    pub display: [u8; 3],
}

impl Centroid {
    pub fn from_point(p: &CloudPoint, display: [u8; 3]) -> Self {
        Self {
            position: p.position,
            color: p.color_f64(),
            normal: p.normal,
            display,
        }
    }
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [u8; 3] {
    let h6 = (h.fract() * 6.0).min(5.999_999);
    let sector = h6.floor();
    let f = h6 - sector;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    let (r, g, b) = match sector as u8 {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    };
    [r, g, b].map(|c| (c * 255.0).round() as u8)
}

/// Fixed table of pairwise-distinct display colors.
pub fn palette() -> &'static [[u8; 3]; PALETTE_SIZE] {
    static PALETTE: OnceLock<[[u8; 3]; PALETTE_SIZE]> = OnceLock::new();
    PALETTE.get_or_init(|| {
        const GOLDEN: f64 = 0.618_033_988_749_895;
        const SHADES: [(f64, f64); 4] = [(0.95, 1.0), (0.55, 0.95), (0.9, 0.65), (0.35, 0.8)];
        let mut out = [[0u8; 3]; PALETTE_SIZE];
        let mut n = 0;
        let mut i = 0usize;
        while n < PALETTE_SIZE {
            let (s, v) = SHADES[(i / 25) % SHADES.len()];
            let c = hsv_to_rgb(i as f64 * GOLDEN, s, v);
            if !out[..n].contains(&c) {
                out[n] = c;
                n += 1;
            }
            i += 1;
        }
        out
    })
}

/// Scaled Euclidean distance over position and color:
/// `sqrt(pos_scale^2 |dXYZ|^2 + alpha^2 |dRGB|^2)`.
#[inline]
pub fn dist(point: &CloudPoint, c: &Centroid, params: &ClusterParams) -> f64 {
    let dp = (point.position - c.position).norm_squared();
    let dc = (point.color_f64() - c.color).norm_squared();
    (params.pos_scale * params.pos_scale * dp + params.alpha * params.alpha * dc).sqrt()
}

/// [`dist`] plus `gamma (1 - cos theta)` for the angle between the normals.
/// The angle term vanishes when either normal is absent.
#[inline]
pub fn similarity(point: &CloudPoint, c: &Centroid, params: &ClusterParams) -> f64 {
    let angle = match (point.normal, c.normal) {
        // 1 - cos(theta) for unit vectors, exactly zero when they coincide
        (Some(a), Some(b)) => params.gamma * 0.5 * (a - b).norm_squared(),
        _ => 0.0,
    };
    dist(point, c, params) + angle
}

/// Index of the centroid minimizing [`similarity`]; ties go to the lowest
/// index.
#[inline]
pub fn nearest_centroid(point: &CloudPoint, centroids: &[Centroid], params: &ClusterParams) -> usize {
    let mut best = 0;
    let mut best_f = f64::INFINITY;
    for (i, c) in centroids.iter().enumerate() {
        let f = similarity(point, c, params);
        if f < best_f {
            best_f = f;
            best = i;
        }
    }
    best
}

/// k-means++ seeding over the valid points: the first seed is uniform, each
/// further seed is drawn with probability proportional to the squared
/// similarity to its nearest chosen seed. Seeds take palette colors in order.
pub fn seed_kmeanspp(
    points: &[CloudPoint],
    params: &ClusterParams,
    rng_seed: u64,
) -> Result<Vec<Centroid>, ClusterError> {
    let k = params.k;
    let valid: Vec<&CloudPoint> = points.iter().filter(|p| p.valid).collect();
    if valid.len() < k {
        return Err(ClusterError::NotEnoughPoints {
            k,
            found: valid.len(),
        });
    }
    let colors = palette();
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let first = rng.random_range(0..valid.len());
    let mut seeds = vec![Centroid::from_point(valid[first], colors[0])];
    let mut d2: Vec<f64> = valid
        .iter()
        .map(|p| similarity(p, &seeds[0], params).powi(2))
        .collect();

    while seeds.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = None;
            for (i, w) in d2.iter().enumerate() {
                if *w <= 0.0 {
                    continue;
                }
                acc += w;
                chosen = Some(i);
                if acc > target {
                    break;
                }
            }
            chosen.expect("positive total has a positive entry")
        } else {
            // every point coincides with a seed
            rng.random_range(0..valid.len())
        };
        let seed = Centroid::from_point(valid[pick], colors[seeds.len()]);
        for (p, d) in valid.iter().zip(d2.iter_mut()) {
            *d = d.min(similarity(p, &seed, params).powi(2));
        }
        seeds.push(seed);
    }
    Ok(seeds)
}

/// `delta[winner] += psi`.
#[inline]
pub fn update_weights(delta: &mut [f64], winner: usize, psi: f64) {
    delta[winner] += psi;
}

/// L1-normalize `delta` into `mu`; all zeros when `delta` sums to zero.
#[inline]
pub fn normalize_weights(delta: &[f64], mu: &mut [f64]) {
    let sum: f64 = delta.iter().sum();
    if sum > 0.0 {
        for (m, d) in mu.iter_mut().zip(delta) {
            *m = d / sum;
        }
    } else {
        mu.fill(0.0);
    }
}

/// Heaviest cluster, lowest index on ties; `None` while every weight is 0.
#[inline]
pub fn argmax_label(mu: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, m) in mu.iter().enumerate() {
        if *m > 0.0 && best.is_none_or(|(_, b)| *m > b) {
            best = Some((i, *m));
        }
    }
    best.map(|(i, _)| i)
}

/// Per-cell membership weights over a fixed grid.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightState {
    width: usize,
    height: usize,
    k: usize,
    delta: Vec<f64>,
    mu: Vec<f64>,
    labels: Vec<Option<usize>>,
}

impl WeightState {
    pub fn new(width: usize, height: usize, k: usize) -> Self {
        let cells = width * height;
        Self {
            width,
            height,
            k,
            delta: vec![0.0; cells * k],
            mu: vec![0.0; cells * k],
            labels: vec![None; cells],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn cells(&self) -> usize {
        self.labels.len()
    }

    pub fn delta(&self, cell: usize) -> &[f64] {
        &self.delta[cell * self.k..(cell + 1) * self.k]
    }

    pub fn mu(&self, cell: usize) -> &[f64] {
        &self.mu[cell * self.k..(cell + 1) * self.k]
    }

    pub fn label(&self, cell: usize) -> Option<usize> {
        self.labels[cell]
    }

    pub fn labels(&self) -> &[Option<usize>] {
        &self.labels
    }

    /// Record a win for `winner` at `cell`, renormalize and relabel.
    pub fn record_win(&mut self, cell: usize, winner: usize, psi: f64) {
        let k = self.k;
        let range = cell * k..(cell + 1) * k;
        update_weights(&mut self.delta[range.clone()], winner, psi);
        normalize_weights(&self.delta[range.clone()], &mut self.mu[range.clone()]);
        self.labels[cell] = argmax_label(&self.mu[range]);
    }

    /// Bytes held by the accumulators, normalized weights and labels.
    pub fn storage_bytes(&self) -> usize {
        (self.delta.len() + self.mu.len()) * std::mem::size_of::<f64>()
            + self.labels.len() * std::mem::size_of::<Option<usize>>()
    }

    fn check_grid(&self, cloud: &OrganizedCloud) -> Result<(), ClusterError> {
        if cloud.width != self.width || cloud.height != self.height {
            return Err(ClusterError::GridMismatch {
                state_w: self.width,
                state_h: self.height,
                cloud_w: cloud.width,
                cloud_h: cloud.height,
            });
        }
        Ok(())
    }
}

/// Cumulative iteration counter.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct IterationClock {
    pub tau: u64,
}

#[derive(Debug, Default, Clone, Copy)]
struct Accum {
    weight: f64,
    position: Vector3<f64>,
    color: Vector3<f64>,
    normal: Vector3<f64>,
}

impl Accum {
    fn merge(&mut self, other: &Accum) {
        self.weight += other.weight;
        self.position += other.position;
        self.color += other.color;
        self.normal += other.normal;
    }
}

/// Recompute each centroid as the `mu`-weighted mean of the valid points'
/// features. Mean normals are renormalized (absent when they cancel out);
/// clusters without weight keep their previous features. Display colors
/// never change.
pub fn update_centroids(
    cloud: &OrganizedCloud,
    state: &WeightState,
    current: &mut [Centroid],
) -> Result<(), ClusterError> {
    state.check_grid(cloud)?;
    let k = state.k;
    if current.len() != k {
        return Err(ClusterError::CentroidCount {
            expected: k,
            found: current.len(),
        });
    }
    let partials: Vec<Vec<Accum>> = cloud
        .points
        .par_chunks(REDUCE_CHUNK)
        .zip(state.mu.par_chunks(REDUCE_CHUNK * k))
        .map(|(pts, mus)| {
            let mut acc = vec![Accum::default(); k];
            for (p, mu) in pts.iter().zip(mus.chunks(k)) {
                if !p.valid {
                    continue;
                }
                let color = p.color_f64();
                for (a, &m) in acc.iter_mut().zip(mu) {
                    if m == 0.0 {
                        continue;
                    }
                    a.weight += m;
                    a.position += p.position * m;
                    a.color += color * m;
                    if let Some(n) = p.normal {
                        a.normal += n * m;
                    }
                }
            }
            acc
        })
        .collect();
    let mut total = vec![Accum::default(); k];
    for part in &partials {
        for (t, a) in total.iter_mut().zip(part) {
            t.merge(a);
        }
    }
    for (c, t) in current.iter_mut().zip(&total) {
        if t.weight <= 0.0 {
            continue;
        }
        c.position = t.position / t.weight;
        c.color = t.color / t.weight;
        let mean_normal = t.normal / t.weight;
        let norm = mean_normal.norm();
        c.normal = (norm > MIN_MEAN_NORMAL).then(|| mean_normal / norm);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StepOptions {
    /// Keep the seeded centroids for the whole run.
    pub freeze_centroids: bool,
}

/// Counts from the last iteration of a [`step_frame`] call.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StepSummary {
    pub iterations: usize,
    /// Valid points whose label changed in the last iteration.
    pub label_changes: usize,
    /// Valid points whose last winner differs from their label.
    pub winner_mismatches: usize,
    pub valid_points: usize,
}

/// Run `params.inner_iters` clustering iterations on one frame. Invalid
/// points leave their weights and labels untouched.
pub fn step_frame(
    cloud: &OrganizedCloud,
    state: &mut WeightState,
    centroids: &mut [Centroid],
    clock: &mut IterationClock,
    params: &ClusterParams,
    opts: StepOptions,
) -> Result<StepSummary, ClusterError> {
    state.check_grid(cloud)?;
    if centroids.len() != state.k {
        return Err(ClusterError::CentroidCount {
            expected: state.k,
            found: centroids.len(),
        });
    }
    let k = state.k;
    let mut summary = StepSummary {
        valid_points: cloud.valid_count(),
        ..StepSummary::default()
    };
    for _ in 0..params.inner_iters {
        let snapshot: &[Centroid] = centroids;
        let (changes, mismatches) = state
            .delta
            .par_chunks_mut(k)
            .zip(state.mu.par_chunks_mut(k))
            .zip(state.labels.par_iter_mut())
            .zip(cloud.points.par_iter())
            .map(|(((delta, mu), label), p)| {
                if !p.valid {
                    return (0usize, 0usize);
                }
                let winner = nearest_centroid(p, snapshot, params);
                update_weights(delta, winner, params.psi);
                normalize_weights(delta, mu);
                let new_label = argmax_label(mu);
                let changed = usize::from(new_label != *label);
                *label = new_label;
                (changed, usize::from(new_label != Some(winner)))
            })
            .reduce(|| (0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
        if !opts.freeze_centroids {
            update_centroids(cloud, state, centroids)?;
        }
        clock.tau += 1;
        summary.iterations += 1;
        summary.label_changes = changes;
        summary.winner_mismatches = mismatches;
    }
    Ok(summary)
}
