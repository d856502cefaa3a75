//! Frame ingestion: camera model, rasters, the on-disk dataset layout and
//! color-to-depth alignment. Synthetic scene rendering lives in [`synthetic`].

pub mod synthetic;

use std::f64::consts::PI;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use image::{ImageBuffer, Luma, Rgb};
use thiserror::Error;

pub use synthetic::{generate_synthetic_scene, Primitive, SceneObject, SyntheticSceneSpec};

/// Label value used for background and for "no label" in 8-bit rasters.
pub const BACKGROUND_LABEL: u8 = 255;

#[derive(Debug, Error)]
pub enum FrameIoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("{path}: expected {expected}, found {found}")]
    UnsupportedFormat {
        path: PathBuf,
        expected: &'static str,
        found: String,
    },
    #[error("frame index {index} out of range (dataset has {count} frames)")]
    OutOfRange { index: usize, count: usize },
    #[error("{what}: expected {expected_w}x{expected_h}, found {found_w}x{found_h}")]
    DimensionMismatch {
        what: String,
        expected_w: usize,
        expected_h: usize,
        found_w: usize,
        found_h: usize,
    },
    #[error("manifest line {line}: {message}")]
    Manifest { line: usize, message: String },
    #[error("invalid camera intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("object {object} lies entirely behind the camera in frame {frame}")]
    BehindCamera { object: usize, frame: usize },
}

/// Field of view and raster sizes of the depth and color sensors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    /// Horizontal depth field of view, radians.
    pub fov_x: f64,
    /// Vertical depth field of view, radians.
    pub fov_y: f64,
    pub depth_width: usize,
    pub depth_height: usize,
    pub color_width: usize,
    pub color_height: usize,
}

impl CameraIntrinsics {
    /// Kinect V2: 512x424 depth, 1920x1080 color, 70x60 degree depth FOV.
    pub fn kinect_v2() -> Self {
        Self {
            fov_x: 1.22173047,
            fov_y: 1.0471975511,
            depth_width: 512,
            depth_height: 424,
            color_width: 1920,
            color_height: 1080,
        }
    }

    /// Kinect V1: 640x480 for both sensors.
    pub fn kinect_v1() -> Self {
        Self {
            fov_x: 1.014468,
            fov_y: 0.7898094,
            depth_width: 640,
            depth_height: 480,
            color_width: 640,
            color_height: 480,
        }
    }

    /// Same field of view, depth and color resized to `width`x`height`.
    pub fn with_resolution(self, width: usize, height: usize) -> Self {
        Self {
            depth_width: width,
            depth_height: height,
            color_width: width,
            color_height: height,
            ..self
        }
    }

    pub fn validate(&self) -> Result<(), FrameIoError> {
        for (name, fov) in [("fov_x", self.fov_x), ("fov_y", self.fov_y)] {
            if !(fov > 0.0 && fov < PI) {
                return Err(FrameIoError::InvalidIntrinsics(format!(
                    "{name} = {fov} must lie in (0, pi)"
                )));
            }
        }
        let dims = [
            ("depth_width", self.depth_width),
            ("depth_height", self.depth_height),
            ("color_width", self.color_width),
            ("color_height", self.color_height),
        ];
        for (name, v) in dims {
            if v < 2 {
                return Err(FrameIoError::InvalidIntrinsics(format!(
                    "{name} = {v} must be at least 2"
                )));
            }
        }
        Ok(())
    }

    /// `2 tan(fov_x / 2)`: metric width of the image plane at unit depth.
    pub fn scale_x(&self) -> f64 {
        2.0 * (self.fov_x / 2.0).tan()
    }

    pub fn scale_y(&self) -> f64 {
        2.0 * (self.fov_y / 2.0).tan()
    }
}

/// Row-major 2D grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster<T> {
    pub width: usize,
    pub height: usize,
    pub data: Vec<T>,
}

impl<T: Clone> Raster<T> {
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }
}

impl<T> Raster<T> {
    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), width * height, "raster data length");
        Self {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> &T {
        &self.data[row * self.width + col]
    }

    #[inline]
    pub fn get_mut(&mut self, row: usize, col: usize) -> &mut T {
        &mut self.data[row * self.width + col]
    }
}

pub type DepthRaster = Raster<f64>;
pub type ColorRaster = Raster<[u8; 3]>;
pub type LabelRaster = Raster<u8>;

/// Color and depth sampled on the same (depth) grid. Depth is in meters,
/// 0 marks an invalid reading.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbdFrame {
    pub depth: DepthRaster,
    pub color: ColorRaster,
    pub frame_index: usize,
}

impl RgbdFrame {
    pub fn new(
        depth: DepthRaster,
        color: ColorRaster,
        frame_index: usize,
    ) -> Result<Self, FrameIoError> {
        if depth.width != color.width || depth.height != color.height {
            return Err(FrameIoError::DimensionMismatch {
                what: "color raster vs depth raster".into(),
                expected_w: depth.width,
                expected_h: depth.height,
                found_w: color.width,
                found_h: color.height,
            });
        }
        if let Some(bad) = depth.data.iter().find(|d| !(d.is_finite() && **d >= 0.0)) {
            return Err(FrameIoError::InvalidScene(format!(
                "depth values must be finite and non-negative, found {bad}"
            )));
        }
        Ok(Self {
            depth,
            color,
            frame_index,
        })
    }

    pub fn width(&self) -> usize {
        self.depth.width
    }

    pub fn height(&self) -> usize {
        self.depth.height
    }
}

/// Resample a color raster onto the depth grid by nearest neighbor under an
/// independent linear rescale of each axis.
pub fn map_color_to_depth(
    color: &ColorRaster,
    depth: &DepthRaster,
    intrinsics: &CameraIntrinsics,
) -> Result<RgbdFrame, FrameIoError> {
    check_dims(
        "color raster",
        (intrinsics.color_width, intrinsics.color_height),
        (color.width, color.height),
    )?;
    check_dims(
        "depth raster",
        (intrinsics.depth_width, intrinsics.depth_height),
        (depth.width, depth.height),
    )?;
    let mapped = resample_nearest(color, depth.width, depth.height);
    RgbdFrame::new(depth.clone(), mapped, 0)
}

/// Nearest-neighbor resample of `src` to `width`x`height`; the source index is
/// `floor(dst * src_len / dst_len)` clamped to the last valid index.
pub(crate) fn resample_nearest<T: Copy>(src: &Raster<T>, width: usize, height: usize) -> Raster<T> {
    let mut data = Vec::with_capacity(width * height);
    for row in 0..height {
        let sr = scaled_index(row, src.height, height);
        for col in 0..width {
            let sc = scaled_index(col, src.width, width);
            data.push(*src.get(sr, sc));
        }
    }
    Raster::from_vec(width, height, data)
}

fn scaled_index(dst: usize, src_len: usize, dst_len: usize) -> usize {
    let idx = (dst as u128 * src_len as u128 / dst_len.max(1) as u128) as usize;
    idx.min(src_len.saturating_sub(1))
}

fn check_dims(
    what: &str,
    expected: (usize, usize),
    found: (usize, usize),
) -> Result<(), FrameIoError> {
    if expected != found {
        return Err(FrameIoError::DimensionMismatch {
            what: what.to_string(),
            expected_w: expected.0,
            expected_h: expected.1,
            found_w: found.0,
            found_h: found.1,
        });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameEntry {
    pub color: PathBuf,
    pub depth: PathBuf,
    pub labels: Option<PathBuf>,
}

/// Dataset description. Relative frame paths resolve against `base_dir`.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub intrinsics: CameraIntrinsics,
    /// Color files are already at depth resolution and pixel-aligned.
    pub pre_aligned: bool,
    pub frames: Vec<FrameEntry>,
    pub base_dir: PathBuf,
}

impl DatasetManifest {
    pub fn load(path: &Path) -> Result<Self, FrameIoError> {
        let text = fs::read_to_string(path).map_err(|source| FrameIoError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        Self::parse(&text, base)
    }

    /// Parse `key = value` lines followed by ordered
    /// `frame = <color>,<depth>[,<labels>]` entries. `#` starts a comment.
    pub fn parse(text: &str, base_dir: PathBuf) -> Result<Self, FrameIoError> {
        let mut intr = CameraIntrinsics::kinect_v2();
        let mut pre_aligned = false;
        let mut frames = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let err = |message: String| FrameIoError::Manifest {
                line: line_no,
                message,
            };
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, got `{line}`")))?;
            let (key, value) = (key.trim(), value.trim());
            let parse_f = |v: &str| {
                v.parse::<f64>()
                    .map_err(|e| err(format!("{key}: {e}")))
            };
            let parse_u = |v: &str| {
                v.parse::<usize>()
                    .map_err(|e| err(format!("{key}: {e}")))
            };
            if key != "frame" && !frames.is_empty() {
                return Err(err(format!("`{key}` must appear before frame entries")));
            }
            match key {
                "fov_x" => intr.fov_x = parse_f(value)?,
                "fov_y" => intr.fov_y = parse_f(value)?,
                "depth_width" => intr.depth_width = parse_u(value)?,
                "depth_height" => intr.depth_height = parse_u(value)?,
                "color_width" => intr.color_width = parse_u(value)?,
                "color_height" => intr.color_height = parse_u(value)?,
                "pre_aligned" => {
                    pre_aligned = value
                        .parse::<bool>()
                        .map_err(|e| err(format!("pre_aligned: {e}")))?
                }
                "frame" => {
                    let parts: Vec<&str> = value.split(',').map(str::trim).collect();
                    if !(2..=3).contains(&parts.len()) || parts.iter().any(|p| p.is_empty()) {
                        return Err(err(
                            "frame entry must be <color>,<depth>[,<labels>]".to_string()
                        ));
                    }
                    frames.push(FrameEntry {
                        color: PathBuf::from(parts[0]),
                        depth: PathBuf::from(parts[1]),
                        labels: parts.get(2).map(PathBuf::from),
                    });
                }
                other => return Err(err(format!("unknown key `{other}`"))),
            }
        }
        if frames.is_empty() {
            return Err(FrameIoError::Manifest {
                line: text.lines().count(),
                message: "manifest lists no frames".into(),
            });
        }
        intr.validate()?;
        Ok(Self {
            intrinsics: intr,
            pre_aligned,
            frames,
            base_dir,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Ground-truth label raster for frame `index`, if the manifest has one.
    pub fn read_labels(&self, index: usize) -> Result<Option<LabelRaster>, FrameIoError> {
        let entry = self.entry(index)?;
        let Some(p) = &entry.labels else {
            return Ok(None);
        };
        let labels = read_label_png(&self.resolve(p))?;
        check_dims(
            "label raster",
            (self.intrinsics.depth_width, self.intrinsics.depth_height),
            (labels.width, labels.height),
        )?;
        Ok(Some(labels))
    }

    fn entry(&self, index: usize) -> Result<&FrameEntry, FrameIoError> {
        self.frames.get(index).ok_or(FrameIoError::OutOfRange {
            index,
            count: self.frames.len(),
        })
    }
}

impl fmt::Display for DatasetManifest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let i = &self.intrinsics;
        writeln!(f, "fov_x = {}", i.fov_x)?;
        writeln!(f, "fov_y = {}", i.fov_y)?;
        writeln!(f, "depth_width = {}", i.depth_width)?;
        writeln!(f, "depth_height = {}", i.depth_height)?;
        writeln!(f, "color_width = {}", i.color_width)?;
        writeln!(f, "color_height = {}", i.color_height)?;
        writeln!(f, "pre_aligned = {}", self.pre_aligned)?;
        for e in &self.frames {
            write!(f, "frame = {},{}", e.color.display(), e.depth.display())?;
            if let Some(l) = &e.labels {
                write!(f, ",{}", l.display())?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

/// Load frame `index`. Color is resampled onto the depth grid unless the
/// manifest declares the input pre-aligned.
pub fn read_frame_pair(manifest: &DatasetManifest, index: usize) -> Result<RgbdFrame, FrameIoError> {
    let entry = manifest.entry(index)?;
    let intr = &manifest.intrinsics;
    let depth = read_depth_png(&manifest.resolve(&entry.depth))?;
    let color = read_color_png(&manifest.resolve(&entry.color))?;
    let mut frame = if manifest.pre_aligned {
        check_dims(
            "depth raster",
            (intr.depth_width, intr.depth_height),
            (depth.width, depth.height),
        )?;
        check_dims(
            "pre-aligned color raster",
            (intr.depth_width, intr.depth_height),
            (color.width, color.height),
        )?;
        RgbdFrame::new(depth, color, index)?
    } else {
        map_color_to_depth(&color, &depth, intr)?
    };
    frame.frame_index = index;
    Ok(frame)
}

fn open_image(path: &Path) -> Result<image::DynamicImage, FrameIoError> {
    if !path.exists() {
        return Err(FrameIoError::Io {
            path: path.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "file not found"),
        });
    }
    image::open(path).map_err(|source| FrameIoError::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// 16-bit grayscale PNG in millimeters.
pub fn read_depth_png(path: &Path) -> Result<DepthRaster, FrameIoError> {
    let img = open_image(path)?;
    let image::DynamicImage::ImageLuma16(buf) = img else {
        return Err(FrameIoError::UnsupportedFormat {
            path: path.to_path_buf(),
            expected: "16-bit grayscale PNG",
            found: format!("{:?}", img.color()),
        });
    };
    let (w, h) = buf.dimensions();
    let data = buf.into_raw().into_iter().map(|mm| f64::from(mm) / 1000.0).collect();
    Ok(Raster::from_vec(w as usize, h as usize, data))
}

pub fn read_color_png(path: &Path) -> Result<ColorRaster, FrameIoError> {
    let buf = open_image(path)?.into_rgb8();
    let (w, h) = buf.dimensions();
    let data = buf.pixels().map(|p| p.0).collect();
    Ok(Raster::from_vec(w as usize, h as usize, data))
}

pub fn read_label_png(path: &Path) -> Result<LabelRaster, FrameIoError> {
    let img = open_image(path)?;
    let image::DynamicImage::ImageLuma8(buf) = img else {
        return Err(FrameIoError::UnsupportedFormat {
            path: path.to_path_buf(),
            expected: "8-bit grayscale PNG",
            found: format!("{:?}", img.color()),
        });
    };
    let (w, h) = buf.dimensions();
    Ok(Raster::from_vec(w as usize, h as usize, buf.into_raw()))
}

fn save_err(path: &Path) -> impl FnOnce(image::ImageError) -> FrameIoError + '_ {
    move |source| FrameIoError::Image {
        path: path.to_path_buf(),
        source,
    }
}

/// Depth in meters is rounded to whole millimeters; values above the u16
/// range saturate.
pub fn write_depth_png(path: &Path, depth: &DepthRaster) -> Result<(), FrameIoError> {
    let data: Vec<u16> = depth
        .data
        .iter()
        .map(|d| (d * 1000.0).round().clamp(0.0, f64::from(u16::MAX)) as u16)
        .collect();
    ImageBuffer::<Luma<u16>, _>::from_raw(depth.width as u32, depth.height as u32, data)
        .expect("raster size")
        .save(path)
        .map_err(save_err(path))
}

pub fn write_color_png(path: &Path, color: &ColorRaster) -> Result<(), FrameIoError> {
    let data: Vec<u8> = color.data.iter().flatten().copied().collect();
    ImageBuffer::<Rgb<u8>, _>::from_raw(color.width as u32, color.height as u32, data)
        .expect("raster size")
        .save(path)
        .map_err(save_err(path))
}

pub fn write_label_png(path: &Path, labels: &LabelRaster) -> Result<(), FrameIoError> {
    ImageBuffer::<Luma<u8>, _>::from_raw(labels.width as u32, labels.height as u32, labels.data.clone())
        .expect("raster size")
        .save(path)
        .map_err(save_err(path))
}

/// Write rendered frames (and optional truth rasters) as a pre-aligned
/// dataset under `dir`, returning the manifest written to `dir/manifest.txt`.
pub fn write_dataset(
    dir: &Path,
    intrinsics: &CameraIntrinsics,
    frames: &[RgbdFrame],
    truth: Option<&[LabelRaster]>,
) -> Result<DatasetManifest, FrameIoError> {
    fs::create_dir_all(dir).map_err(|source| FrameIoError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut entries = Vec::with_capacity(frames.len());
    for (i, frame) in frames.iter().enumerate() {
        let color = PathBuf::from(format!("color_{i:06}.png"));
        let depth = PathBuf::from(format!("depth_{i:06}.png"));
        write_color_png(&dir.join(&color), &frame.color)?;
        write_depth_png(&dir.join(&depth), &frame.depth)?;
        let labels = match truth.and_then(|t| t.get(i)) {
            Some(raster) => {
                let p = PathBuf::from(format!("truth_{i:06}.png"));
                write_label_png(&dir.join(&p), raster)?;
                Some(p)
            }
            None => None,
        };
        entries.push(FrameEntry {
            color,
            depth,
            labels,
        });
    }
    let manifest = DatasetManifest {
        intrinsics: intrinsics.with_resolution(intrinsics.depth_width, intrinsics.depth_height),
        pre_aligned: true,
        frames: entries,
        base_dir: dir.to_path_buf(),
    };
    let path = dir.join("manifest.txt");
    fs::write(&path, manifest.to_string()).map_err(|source| FrameIoError::Io { path, source })?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn gradient(w: usize, h: usize) -> ColorRaster {
        let data = (0..h)
            .flat_map(|r| (0..w).map(move |c| [c as u8, r as u8, 7]))
            .collect();
        Raster::from_vec(w, h, data)
    }

    #[test]
    fn mapping_scales_each_axis() {
        let intr = CameraIntrinsics {
            color_width: 1024,
            color_height: 848,
            ..CameraIntrinsics::kinect_v2()
        };
        let color = Raster::from_vec(
            1024,
            848,
            (0..848u32)
                .flat_map(|r| (0..1024u32).map(move |c| [(c % 256) as u8, (r % 256) as u8, (c / 256) as u8]))
                .collect(),
        );
        let depth = Raster::filled(512, 424, 1.0);
        let frame = map_color_to_depth(&color, &depth, &intr).unwrap();
        // depth (col 10, row 20) samples color (col 20, row 40)
        assert_eq!(*frame.color.get(20, 10), [20, 40, 0]);
    }

    #[test]
    fn mapping_same_size_is_identity() {
        let intr = CameraIntrinsics::kinect_v2().with_resolution(16, 9);
        let color = gradient(16, 9);
        let frame = map_color_to_depth(&color, &Raster::filled(16, 9, 1.0), &intr).unwrap();
        assert_eq!(frame.color, color);
    }

    #[test]
    fn mapping_clamps_right_edge() {
        let src = gradient(5, 3);
        let out = resample_nearest(&src, 4, 2);
        assert_eq!(out.get(1, 3)[0], 3);
        assert_eq!(out.get(1, 3)[1], 1);
        let up = resample_nearest(&src, 11, 7);
        assert_eq!(up.get(6, 10)[0], 4);
        assert_eq!(up.get(6, 10)[1], 2);
    }

    #[test]
    fn mapping_rejects_wrong_sizes() {
        let intr = CameraIntrinsics::kinect_v2();
        let err = map_color_to_depth(&gradient(4, 4), &Raster::filled(512, 424, 1.0), &intr);
        assert!(matches!(err, Err(FrameIoError::DimensionMismatch { .. })));
    }

    proptest! {
        #[test]
        fn resample_never_reads_out_of_bounds(
            sw in 1usize..40, sh in 1usize..40, dw in 1usize..40, dh in 1usize..40
        ) {
            let src = gradient(sw, sh);
            let out = resample_nearest(&src, dw, dh);
            prop_assert_eq!(out.data.len(), dw * dh);
        }
    }

    #[test]
    fn intrinsics_validation() {
        assert!(CameraIntrinsics::kinect_v2().validate().is_ok());
        assert!(CameraIntrinsics::kinect_v1().validate().is_ok());
        let bad = CameraIntrinsics {
            fov_x: PI,
            ..CameraIntrinsics::kinect_v2()
        };
        assert!(bad.validate().is_err());
        assert!(CameraIntrinsics::kinect_v2().with_resolution(1, 5).validate().is_err());
    }

    #[test]
    fn manifest_parse_and_print() {
        let text = "# dataset\nfov_x = 1.0\ndepth_width = 4\ndepth_height = 3\ncolor_width = 8\ncolor_height = 6\n\
                    frame = c0.png, d0.png\nframe = c1.png,d1.png,t1.png\n";
        let m = DatasetManifest::parse(text, PathBuf::from("/data")).unwrap();
        assert_eq!(m.len(), 2);
        assert!(!m.pre_aligned);
        assert_eq!(m.intrinsics.fov_x, 1.0);
        assert_eq!(m.frames[1].labels.as_deref(), Some(Path::new("t1.png")));
        assert_eq!(m.resolve(Path::new("c0.png")), PathBuf::from("/data/c0.png"));
        let again = DatasetManifest::parse(&m.to_string(), PathBuf::from("/data")).unwrap();
        assert_eq!(again, m);
    }

    #[test]
    fn manifest_errors() {
        let base = PathBuf::from(".");
        assert!(DatasetManifest::parse("fov_x = 1.0\n", base.clone()).is_err());
        assert!(DatasetManifest::parse("frame = a.png\n", base.clone()).is_err());
        assert!(DatasetManifest::parse("bogus = 1\nframe = a,b\n", base.clone()).is_err());
        let late = "frame = a,b\nfov_x = 1.0\n";
        assert!(matches!(
            DatasetManifest::parse(late, base),
            Err(FrameIoError::Manifest { line: 2, .. })
        ));
    }

    #[test]
    fn frame_rejects_negative_depth() {
        let depth = Raster::from_vec(2, 1, vec![1.0, -0.5]);
        let color = Raster::filled(2, 1, [0, 0, 0]);
        assert!(RgbdFrame::new(depth, color, 0).is_err());
    }
}
