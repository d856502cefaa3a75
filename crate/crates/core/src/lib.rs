//! Streaming weighted k-means segmentation of organized RGB-D point clouds.
//!
//! Frames flow through [`preprocess`] (back-projection, normals, depth-range
//! removal, subsampling) into [`cluster`], where every pixel accumulates
//! membership weights across frames. [`render_export`] turns those weights
//! into blended colors, PLY clouds, label rasters and object masks.
//! [`pipeline`] ties the steps together over a dataset described by
//! [`frame_io`]; [`bench`] measures throughput and segmentation quality.

pub mod bench;
pub mod cluster;
pub mod config;
pub mod frame_io;
pub mod pipeline;
pub mod preprocess;
pub mod render_export;

pub use cluster::{Centroid, ClusterParams, IterationClock, WeightState};
pub use config::PipelineConfig;
pub use frame_io::{CameraIntrinsics, DatasetManifest, RgbdFrame};
pub use pipeline::{Pipeline, PipelineError};
pub use preprocess::{CloudPoint, DepthRange, OrganizedCloud};
