//! Pipeline configuration: one validated record, loadable from flat
//! `key = value` text and overridable key by key.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::cluster::{ClusterParams, ParamError};
use crate::frame_io::CameraIntrinsics;
use crate::preprocess::{DepthRange, PreprocessError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error(transparent)]
    Cluster(#[from] ParamError),
    #[error("depth range: {0}")]
    Range(PreprocessError),
    #[error("stride must be at least 1")]
    Stride,
    #[error("threads must be at least 1")]
    Threads,
    #[error("field of view {name} = {value} must lie in (0, pi)")]
    Fov { name: &'static str, value: f64 },
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("{key}: cannot parse `{value}`")]
    BadValue { key: String, value: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FovPreset {
    KinectV1,
    KinectV2,
}

impl FovPreset {
    pub fn fov(self) -> (f64, f64) {
        let i = match self {
            FovPreset::KinectV1 => CameraIntrinsics::kinect_v1(),
            FovPreset::KinectV2 => CameraIntrinsics::kinect_v2(),
        };
        (i.fov_x, i.fov_y)
    }
}

impl FromStr for FovPreset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "kinect-v1" => Ok(Self::KinectV1),
            "kinect-v2" => Ok(Self::KinectV2),
            other => Err(format!("unknown FOV preset `{other}` (kinect-v1, kinect-v2)")),
        }
    }
}

impl fmt::Display for FovPreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FovPreset::KinectV1 => "kinect-v1",
            FovPreset::KinectV2 => "kinect-v2",
        })
    }
}

/// Field of view override applied on top of the dataset's intrinsics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FovSetting {
    Preset(FovPreset),
    Explicit { fov_x: f64, fov_y: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub cluster: ClusterParams,
    pub depth_min: f64,
    pub depth_max: f64,
    pub stride: usize,
    /// `None` keeps the field of view recorded in the dataset manifest.
    pub fov: Option<FovSetting>,
    pub rng_seed: u64,
    pub threads: usize,
    pub freeze_centroids: bool,
    pub legacy_eq13: bool,
    pub pre_aligned: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let range = DepthRange::default();
        Self {
            cluster: ClusterParams::default(),
            depth_min: range.near,
            depth_max: range.far,
            stride: 1,
            fov: None,
            rng_seed: 0,
            threads: 1,
            freeze_centroids: false,
            legacy_eq13: false,
            pre_aligned: false,
        }
    }
}

/// Keys accepted by [`PipelineConfig::set`]; `_` and `-` are interchangeable.
pub const CONFIG_KEYS: &[&str] = &[
    "k",
    "alpha",
    "pos-scale",
    "gamma",
    "psi",
    "inner-iters",
    "depth-min",
    "depth-max",
    "stride",
    "fov-preset",
    "fov-x",
    "fov-y",
    "rng-seed",
    "threads",
    "freeze-centroids",
    "legacy-eq13",
    "pre-aligned",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value.parse().map_err(|_| ConfigError::BadValue {
        key: key.to_string(),
        value: value.to_string(),
    })
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.cluster.validate()?;
        self.depth_range()?;
        if self.stride == 0 {
            return Err(ConfigError::Stride);
        }
        if self.threads == 0 {
            return Err(ConfigError::Threads);
        }
        if let Some(FovSetting::Explicit { fov_x, fov_y }) = self.fov {
            for (name, value) in [("fov_x", fov_x), ("fov_y", fov_y)] {
                if !(value > 0.0 && value < std::f64::consts::PI) {
                    return Err(ConfigError::Fov { name, value });
                }
            }
        }
        Ok(())
    }

    pub fn depth_range(&self) -> Result<DepthRange, ConfigError> {
        DepthRange::new(self.depth_min, self.depth_max).map_err(ConfigError::Range)
    }

    /// `base` with this configuration's field of view applied.
    pub fn intrinsics(&self, base: &CameraIntrinsics) -> CameraIntrinsics {
        let (fov_x, fov_y) = match self.fov {
            None => (base.fov_x, base.fov_y),
            Some(FovSetting::Preset(p)) => p.fov(),
            Some(FovSetting::Explicit { fov_x, fov_y }) => (fov_x, fov_y),
        };
        CameraIntrinsics {
            fov_x,
            fov_y,
            ..*base
        }
    }

    /// Assign one setting by name. Boolean flags accept `true`/`false`.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let norm = key.trim().replace('_', "-");
        let key = norm.as_str();
        let value = value.trim();
        match key {
            "k" => self.cluster.k = parse(key, value)?,
            "alpha" => self.cluster.alpha = parse(key, value)?,
            "pos-scale" => self.cluster.pos_scale = parse(key, value)?,
            "gamma" => self.cluster.gamma = parse(key, value)?,
            "psi" => self.cluster.psi = parse(key, value)?,
            "inner-iters" => self.cluster.inner_iters = parse(key, value)?,
            "depth-min" => self.depth_min = parse(key, value)?,
            "depth-max" => self.depth_max = parse(key, value)?,
            "stride" => self.stride = parse(key, value)?,
            "fov-preset" => {
                let preset = value.parse().map_err(|_| ConfigError::BadValue {
                    key: key.to_string(),
                    value: value.to_string(),
                })?;
                self.fov = Some(FovSetting::Preset(preset));
            }
            "fov-x" | "fov-y" => {
                let v: f64 = parse(key, value)?;
                let (mut x, mut y) = match self.fov {
                    Some(FovSetting::Explicit { fov_x, fov_y }) => (fov_x, fov_y),
                    Some(FovSetting::Preset(p)) => p.fov(),
                    None => FovPreset::KinectV2.fov(),
                };
                if key == "fov-x" {
                    x = v;
                } else {
                    y = v;
                }
                self.fov = Some(FovSetting::Explicit { fov_x: x, fov_y: y });
            }
            "rng-seed" => self.rng_seed = parse(key, value)?,
            "threads" => self.threads = parse(key, value)?,
            "freeze-centroids" => self.freeze_centroids = parse(key, value)?,
            "legacy-eq13" => self.legacy_eq13 = parse(key, value)?,
            "pre-aligned" => self.pre_aligned = parse(key, value)?,
            other => return Err(ConfigError::UnknownKey(other.to_string())),
        }
        Ok(())
    }

    /// Apply `key = value` lines on top of `self`. `#` starts a comment.
    /// The result is not validated.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: i + 1,
                message: format!("expected `key = value`, got `{line}`"),
            })?;
            self.set(k, v).map_err(|e| ConfigError::Syntax {
                line: i + 1,
                message: e.to_string(),
            })?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }
}

impl fmt::Display for PipelineConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = &self.cluster;
        writeln!(f, "k = {}", c.k)?;
        writeln!(f, "alpha = {}", c.alpha)?;
        writeln!(f, "pos-scale = {}", c.pos_scale)?;
        writeln!(f, "gamma = {}", c.gamma)?;
        writeln!(f, "psi = {}", c.psi)?;
        writeln!(f, "inner-iters = {}", c.inner_iters)?;
        writeln!(f, "depth-min = {}", self.depth_min)?;
        writeln!(f, "depth-max = {}", self.depth_max)?;
        writeln!(f, "stride = {}", self.stride)?;
        match self.fov {
            None => {}
            Some(FovSetting::Preset(p)) => writeln!(f, "fov-preset = {p}")?,
            Some(FovSetting::Explicit { fov_x, fov_y }) => {
                writeln!(f, "fov-x = {fov_x}")?;
                writeln!(f, "fov-y = {fov_y}")?;
            }
        }
        writeln!(f, "rng-seed = {}", self.rng_seed)?;
        writeln!(f, "threads = {}", self.threads)?;
        writeln!(f, "freeze-centroids = {}", self.freeze_centroids)?;
        writeln!(f, "legacy-eq13 = {}", self.legacy_eq13)?;
        writeln!(f, "pre-aligned = {}", self.pre_aligned)
    }
}
