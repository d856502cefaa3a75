//! Ray-cast renderer for labeled synthetic RGB-D sequences.
//!
//! Every depth pixel `(col, row)` owns the camera ray
//! `t * (scale_x (col/W - 0.5), scale_y (row/H - 0.5), 1)`, so the rendered
//! depth `t` is exactly the `z` that back-projection will reproduce.

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Deserialize;

use super::{CameraIntrinsics, FrameIoError, LabelRaster, Raster, RgbdFrame, BACKGROUND_LABEL};

/// Smallest depth noise may produce; keeps noisy pixels valid after
/// millimeter quantization.
const MIN_NOISY_DEPTH: f64 = 0.001;

/// Words of generator output reserved per pixel.
const WORDS_PER_PIXEL: u128 = 64;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Primitive {
    Sphere {
        center: [f64; 3],
        radius: f64,
    },
    /// Axis-aligned box.
    Box {
        center: [f64; 3],
        half_extents: [f64; 3],
    },
    /// Flat disk; `radius` bounds the plane around `center`.
    Plane {
        center: [f64; 3],
        normal: [f64; 3],
        radius: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct SceneObject {
    #[serde(flatten)]
    pub shape: Primitive,
    pub color: [u8; 3],
    /// Per-frame offset added to the primitive's center. Frames past the end
    /// of the list reuse the last offset; empty means static.
    #[serde(default)]
    pub trajectory: Vec<[f64; 3]>,
    /// First frame in which the object exists.
    #[serde(default)]
    pub first_frame: usize,
    /// Last frame in which the object exists (inclusive).
    #[serde(default)]
    pub last_frame: Option<usize>,
}

impl SceneObject {
    pub fn new(shape: Primitive, color: [u8; 3]) -> Self {
        Self {
            shape,
            color,
            trajectory: Vec::new(),
            first_frame: 0,
            last_frame: None,
        }
    }

    fn present(&self, frame: usize) -> bool {
        frame >= self.first_frame && self.last_frame.is_none_or(|last| frame <= last)
    }

    fn offset(&self, frame: usize) -> Vector3<f64> {
        self.trajectory
            .get(frame)
            .or(self.trajectory.last())
            .map(|o| Vector3::from(*o))
            .unwrap_or_else(Vector3::zeros)
    }

    fn center(&self) -> Vector3<f64> {
        match &self.shape {
            Primitive::Sphere { center, .. }
            | Primitive::Box { center, .. }
            | Primitive::Plane { center, .. } => Vector3::from(*center),
        }
    }

    /// Largest z reached by the shape at `offset`.
    fn max_z(&self, offset: &Vector3<f64>) -> f64 {
        let c = self.center() + offset;
        match &self.shape {
            Primitive::Sphere { radius, .. } => c.z + radius,
            Primitive::Box { half_extents, .. } => c.z + half_extents[2],
            Primitive::Plane { normal, radius, .. } => {
                let n = Vector3::from(*normal).normalize();
                // half-extent of a disk along z
                c.z + radius * (1.0 - n.z * n.z).max(0.0).sqrt()
            }
        }
    }

    /// Nearest positive ray parameter hitting this object.
    fn intersect(&self, dir: &Vector3<f64>, offset: &Vector3<f64>) -> Option<f64> {
        let c = self.center() + offset;
        match &self.shape {
            Primitive::Sphere { radius, .. } => {
                let a = dir.norm_squared();
                let b = dir.dot(&c);
                let disc = b * b - a * (c.norm_squared() - radius * radius);
                if disc < 0.0 {
                    return None;
                }
                let s = disc.sqrt();
                [(b - s) / a, (b + s) / a].into_iter().find(|t| *t > 0.0)
            }
            Primitive::Box { half_extents, .. } => {
                let mut t_near = f64::NEG_INFINITY;
                let mut t_far = f64::INFINITY;
                for axis in 0..3 {
                    let lo = c[axis] - half_extents[axis];
                    let hi = c[axis] + half_extents[axis];
                    if dir[axis] == 0.0 {
                        if 0.0 < lo || 0.0 > hi {
                            return None;
                        }
                        continue;
                    }
                    let (t0, t1) = (lo / dir[axis], hi / dir[axis]);
                    t_near = t_near.max(t0.min(t1));
                    t_far = t_far.min(t0.max(t1));
                }
                if t_near > t_far || t_far <= 0.0 {
                    None
                } else if t_near > 0.0 {
                    Some(t_near)
                } else {
                    Some(t_far)
                }
            }
            Primitive::Plane { normal, radius, .. } => {
                let n = Vector3::from(*normal);
                let denom = n.dot(dir);
                if denom.abs() < 1e-12 {
                    return None;
                }
                let t = n.dot(&c) / denom;
                (t > 0.0 && (dir * t - c).norm() <= *radius).then_some(t)
            }
        }
    }

    fn validate(&self, index: usize) -> Result<(), FrameIoError> {
        let bad = |msg: String| FrameIoError::InvalidScene(format!("object {index}: {msg}"));
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        match &self.shape {
            Primitive::Sphere { center, radius } => {
                if !finite(center) || !(*radius > 0.0 && radius.is_finite()) {
                    return Err(bad(format!("sphere radius {radius} must be positive")));
                }
            }
            Primitive::Box {
                center,
                half_extents,
            } => {
                if !finite(center) || half_extents.iter().any(|h| !(*h > 0.0 && h.is_finite())) {
                    return Err(bad("box half-extents must be positive".into()));
                }
            }
            Primitive::Plane {
                center,
                normal,
                radius,
            } => {
                if !finite(center) || !(*radius > 0.0) {
                    return Err(bad("plane radius must be positive".into()));
                }
                if !finite(normal) || Vector3::from(*normal).norm() < 1e-12 {
                    return Err(bad("plane normal must be non-zero".into()));
                }
            }
        }
        if self.trajectory.iter().any(|o| !finite(o)) {
            return Err(bad("trajectory offsets must be finite".into()));
        }
        if self.last_frame.is_some_and(|l| l < self.first_frame) {
            return Err(bad("last_frame precedes first_frame".into()));
        }
        Ok(())
    }
}

/// Scene description, deserializable from TOML.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSceneSpec {
    #[serde(default)]
    pub objects: Vec<SceneObject>,
    /// Depth of the fronto-parallel background plane; `None` leaves pixels
    /// that hit nothing invalid.
    pub background_depth: Option<f64>,
    #[serde(default = "default_background_color")]
    pub background_color: [u8; 3],
    pub frame_count: usize,
    /// Standard deviation of additive depth noise, meters.
    #[serde(default)]
    pub depth_noise: f64,
    /// Standard deviation of additive color noise per channel.
    #[serde(default)]
    pub color_noise: f64,
}

fn default_background_color() -> [u8; 3] {
    [128, 128, 128]
}

impl SyntheticSceneSpec {
    pub fn from_toml(text: &str) -> Result<Self, FrameIoError> {
        toml::from_str(text).map_err(|e| FrameIoError::InvalidScene(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), FrameIoError> {
        if self.frame_count == 0 {
            return Err(FrameIoError::InvalidScene("frame_count must be at least 1".into()));
        }
        if self.objects.len() >= usize::from(BACKGROUND_LABEL) {
            return Err(FrameIoError::InvalidScene(format!(
                "at most {} objects are supported",
                BACKGROUND_LABEL - 1
            )));
        }
        if let Some(d) = self.background_depth {
            if !(d > 0.0 && d.is_finite()) {
                return Err(FrameIoError::InvalidScene(format!(
                    "background depth {d} must be positive"
                )));
            }
        }
        for (name, s) in [("depth_noise", self.depth_noise), ("color_noise", self.color_noise)] {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(FrameIoError::InvalidScene(format!("{name} must be >= 0")));
            }
        }
        for (i, obj) in self.objects.iter().enumerate() {
            obj.validate(i)?;
            for frame in (0..self.frame_count).filter(|f| obj.present(*f)) {
                if obj.max_z(&obj.offset(frame)) <= 0.0 {
                    return Err(FrameIoError::BehindCamera { object: i, frame });
                }
            }
        }
        Ok(())
    }
}

/// Ray direction (unnormalized, unit z) of depth pixel `(col, row)`.
pub fn pixel_ray(col: usize, row: usize, intrinsics: &CameraIntrinsics) -> Vector3<f64> {
    Vector3::new(
        intrinsics.scale_x() * (col as f64 / intrinsics.depth_width as f64 - 0.5),
        intrinsics.scale_y() * (row as f64 / intrinsics.depth_height as f64 - 0.5),
        1.0,
    )
}

/// Render `spec` at the depth resolution of `intrinsics`. Object `i` is
/// labeled `i + 1`; background and empty pixels carry [`BACKGROUND_LABEL`].
/// The output is a pure function of `(spec, intrinsics, seed)`.
pub fn generate_synthetic_scene(
    spec: &SyntheticSceneSpec,
    intrinsics: &CameraIntrinsics,
    seed: u64,
) -> Result<(Vec<RgbdFrame>, Vec<LabelRaster>), FrameIoError> {
    spec.validate()?;
    intrinsics.validate().map_err(|_| {
        FrameIoError::InvalidScene(format!(
            "cannot render at {}x{}",
            intrinsics.depth_width, intrinsics.depth_height
        ))
    })?;
    let (w, h) = (intrinsics.depth_width, intrinsics.depth_height);
    let rays: Vec<Vector3<f64>> = (0..h)
        .flat_map(|r| (0..w).map(move |c| (r, c)))
        .map(|(r, c)| pixel_ray(c, r, intrinsics))
        .collect();

    let mut frames = Vec::with_capacity(spec.frame_count);
    let mut truths = Vec::with_capacity(spec.frame_count);
    for f in 0..spec.frame_count {
        let live: Vec<(usize, &SceneObject, Vector3<f64>)> = spec
            .objects
            .iter()
            .enumerate()
            .filter(|(_, o)| o.present(f))
            .map(|(i, o)| (i, o, o.offset(f)))
            .collect();

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(f as u64);
        let mut depth = Vec::with_capacity(w * h);
        let mut color = Vec::with_capacity(w * h);
        let mut labels = Vec::with_capacity(w * h);
        for (pixel, dir) in rays.iter().enumerate() {
            let mut best: Option<(f64, u8, [u8; 3])> = spec
                .background_depth
                .map(|d| (d, BACKGROUND_LABEL, spec.background_color));
            for (i, obj, off) in &live {
                if let Some(t) = obj.intersect(dir, off) {
                    if best.is_none_or(|(bt, _, _)| t < bt) {
                        best = Some((t, (*i + 1) as u8, obj.color));
                    }
                }
            }
            let Some((t, label, rgb)) = best else {
                depth.push(0.0);
                color.push([0, 0, 0]);
                labels.push(BACKGROUND_LABEL);
                continue;
            };
            rng.set_word_pos(pixel as u128 * WORDS_PER_PIXEL);
            let mut noise = || -> f64 { StandardNormal.sample(&mut rng) };
            let d = if spec.depth_noise > 0.0 {
                (t + spec.depth_noise * noise()).max(MIN_NOISY_DEPTH)
            } else {
                t
            };
            let c = if spec.color_noise > 0.0 {
                rgb.map(|ch| (f64::from(ch) + spec.color_noise * noise()).round().clamp(0.0, 255.0) as u8)
            } else {
                rgb
            };
            depth.push(d);
            color.push(c);
            labels.push(label);
        }
        frames.push(RgbdFrame::new(
            Raster::from_vec(w, h, depth),
            Raster::from_vec(w, h, color),
            f,
        )?);
        truths.push(Raster::from_vec(w, h, labels));
    }
    Ok((frames, truths))
}
