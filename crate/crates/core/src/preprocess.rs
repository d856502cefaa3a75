//! Depth frame to organized point cloud: back-projection, grid normals,
//! depth-range background removal and stride subsampling.

use nalgebra::Vector3;
use rayon::prelude::*;
use thiserror::Error;

use crate::frame_io::{CameraIntrinsics, RgbdFrame};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PreprocessError {
    #[error("depth {0} m is not a valid reading")]
    InvalidDepth(f64),
    #[error("depth range [{near}, {far}] must satisfy 0 <= near < far")]
    InvalidRange { near: f64, far: f64 },
    #[error("stride must be at least 1")]
    ZeroStride,
}

/// One sample of an organized cloud: position, color and surface normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CloudPoint {
    /// Camera-centered position in meters; `z` is the depth reading.
    pub position: Vector3<f64>,
    pub color: [u8; 3],
    /// Unit normal facing the camera (`z <= 0`); `None` when it could not be
    /// estimated.
    pub normal: Option<Vector3<f64>>,
    pub valid: bool,
    /// `(row, col)` in the source depth raster.
    pub grid: (usize, usize),
}

impl CloudPoint {
    pub fn invalid(row: usize, col: usize) -> Self {
        Self {
            position: Vector3::zeros(),
            color: [0; 3],
            normal: None,
            valid: false,
            grid: (row, col),
        }
    }

    pub fn color_f64(&self) -> Vector3<f64> {
        Vector3::new(
            f64::from(self.color[0]),
            f64::from(self.color[1]),
            f64::from(self.color[2]),
        )
    }
}

/// Row-major grid of points, one per (possibly subsampled) depth pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct OrganizedCloud {
    pub width: usize,
    pub height: usize,
    pub points: Vec<CloudPoint>,
    pub frame_index: usize,
}

impl OrganizedCloud {
    #[inline]
    pub fn at(&self, row: usize, col: usize) -> &CloudPoint {
        &self.points[row * self.width + col]
    }

    pub fn valid_count(&self) -> usize {
        self.points.iter().filter(|p| p.valid).count()
    }
}

/// Closed interval of accepted depths, meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthRange {
    pub near: f64,
    pub far: f64,
}

impl DepthRange {
    pub fn new(near: f64, far: f64) -> Result<Self, PreprocessError> {
        if !(near >= 0.0 && near < far && far.is_finite()) {
            return Err(PreprocessError::InvalidRange { near, far });
        }
        Ok(Self { near, far })
    }

    pub fn contains(&self, z: f64) -> bool {
        z >= self.near && z <= self.far
    }
}

impl Default for DepthRange {
    /// The usable range of a Kinect V2 depth sensor.
    fn default() -> Self {
        Self {
            near: 0.5,
            far: 4.5,
        }
    }
}

/// Pixel-to-camera mapping derived from the field of view.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    scale_x: f64,
    scale_y: f64,
    width: f64,
    /// Divisor of the row coordinate: the depth height, or the depth width in
    /// legacy mode.
    row_divisor: f64,
}

impl Projection {
    pub fn new(intrinsics: &CameraIntrinsics) -> Self {
        Self {
            scale_x: intrinsics.scale_x(),
            scale_y: intrinsics.scale_y(),
            width: intrinsics.depth_width as f64,
            row_divisor: intrinsics.depth_height as f64,
        }
    }

    /// Normalizes rows by the raster *width*, as the originally published
    /// vertical formula does.
    pub fn legacy(intrinsics: &CameraIntrinsics) -> Self {
        Self {
            row_divisor: intrinsics.depth_width as f64,
            ..Self::new(intrinsics)
        }
    }

    #[inline]
    pub fn back_project(&self, px: f64, py: f64, pz: f64) -> Result<Vector3<f64>, PreprocessError> {
        if !(pz > 0.0 && pz.is_finite()) {
            return Err(PreprocessError::InvalidDepth(pz));
        }
        Ok(Vector3::new(
            pz * self.scale_x * (px / self.width - 0.5),
            pz * self.scale_y * (py / self.row_divisor - 0.5),
            pz,
        ))
    }

    /// Inverse of [`Projection::back_project`]: `(px, py, pz)`.
    pub fn forward_project(&self, world: &Vector3<f64>) -> (f64, f64, f64) {
        let z = world.z;
        (
            (world.x / (z * self.scale_x) + 0.5) * self.width,
            (world.y / (z * self.scale_y) + 0.5) * self.row_divisor,
            z,
        )
    }
}

/// Camera-frame position of depth pixel `(px, py)` at depth `pz` meters.
pub fn back_project(
    px: f64,
    py: f64,
    pz: f64,
    intrinsics: &CameraIntrinsics,
) -> Result<Vector3<f64>, PreprocessError> {
    Projection::new(intrinsics).back_project(px, py, pz)
}

/// Back-project every pixel of `frame`. Zero-depth pixels become invalid
/// points.
pub fn build_cloud(frame: &RgbdFrame, projection: &Projection) -> OrganizedCloud {
    let (w, h) = (frame.width(), frame.height());
    let points = (0..w * h)
        .into_par_iter()
        .map(|i| {
            let (row, col) = (i / w, i % w);
            match projection.back_project(col as f64, row as f64, frame.depth.data[i]) {
                Ok(position) => CloudPoint {
                    position,
                    color: frame.color.data[i],
                    normal: None,
                    valid: true,
                    grid: (row, col),
                },
                Err(_) => CloudPoint::invalid(row, col),
            }
        })
        .collect();
    OrganizedCloud {
        width: w,
        height: h,
        points,
        frame_index: frame.frame_index,
    }
}

/// Smallest cross-product norm accepted as a usable normal.
const MIN_NORMAL_NORM: f64 = 1e-12;

/// Estimate normals from central differences of the 4-neighborhood:
/// `(P[r][c+1] - P[r][c-1]) x (P[r+1][c] - P[r-1][c])`, oriented toward the
/// camera. Border points and points with an invalid neighbor get no normal.
pub fn compute_normals(cloud: &mut OrganizedCloud) {
    let (w, h) = (cloud.width, cloud.height);
    let pts = &cloud.points;
    let normals: Vec<Option<Vector3<f64>>> = (0..w * h)
        .into_par_iter()
        .map(|i| {
            let (r, c) = (i / w, i % w);
            if !pts[i].valid || r == 0 || c == 0 || r + 1 >= h || c + 1 >= w {
                return None;
            }
            let [left, right, up, down] =
                [i - 1, i + 1, i - w, i + w].map(|j| pts[j]);
            if !(left.valid && right.valid && up.valid && down.valid) {
                return None;
            }
            let n = (right.position - left.position).cross(&(down.position - up.position));
            let norm = n.norm();
            if !(norm > MIN_NORMAL_NORM) {
                return None;
            }
            let n = n / norm;
            Some(if n.z > 0.0 { -n } else { n })
        })
        .collect();
    for (p, n) in cloud.points.iter_mut().zip(normals) {
        p.normal = n;
    }
}

/// Invalidate points whose depth falls outside `range`.
pub fn remove_background(cloud: &mut OrganizedCloud, range: &DepthRange) {
    cloud.points.par_iter_mut().for_each(|p| {
        if p.valid && !range.contains(p.position.z) {
            p.valid = false;
        }
    });
}

/// Keep the points at rows and columns divisible by `stride`.
pub fn subsample(cloud: &OrganizedCloud, stride: usize) -> Result<OrganizedCloud, PreprocessError> {
    if stride == 0 {
        return Err(PreprocessError::ZeroStride);
    }
    if stride == 1 {
        return Ok(cloud.clone());
    }
    let w = cloud.width.div_ceil(stride);
    let h = cloud.height.div_ceil(stride);
    let points = (0..h)
        .flat_map(|r| (0..w).map(move |c| (r * stride, c * stride)))
        .map(|(r, c)| *cloud.at(r, c))
        .collect();
    Ok(OrganizedCloud {
        width: w,
        height: h,
        points,
        frame_index: cloud.frame_index,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PreprocessOptions {
    pub projection: Projection,
    pub range: DepthRange,
    pub stride: usize,
}

/// Back-project, estimate normals, drop out-of-range depths and subsample.
pub fn preprocess_frame(
    frame: &RgbdFrame,
    opts: &PreprocessOptions,
) -> Result<OrganizedCloud, PreprocessError> {
    let mut cloud = build_cloud(frame, &opts.projection);
    compute_normals(&mut cloud);
    remove_background(&mut cloud, &opts.range);
    subsample(&cloud, opts.stride)
}
