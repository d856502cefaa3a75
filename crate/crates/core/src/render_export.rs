//! Weight-blended coloring, ASCII PLY and label raster export, and
//! seed-pixel object masks.

use std::collections::VecDeque;
use std::fs;
use std::io::{self, BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::cluster::WeightState;
use crate::frame_io::{self, FrameIoError, LabelRaster, Raster, BACKGROUND_LABEL};
use crate::preprocess::OrganizedCloud;

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Raster(#[from] FrameIoError),
    #[error("label rasters hold at most {max} clusters, got k = {k}")]
    TooManyClusters { k: usize, max: usize },
    #[error("seed pixel ({row}, {col}) is outside the grid or unlabeled")]
    InvalidSeed { row: usize, col: usize },
    #[error("malformed PLY: {0}")]
    Ply(String),
}

/// Largest cluster count representable in an 8-bit label raster.
pub const MAX_LABELED_CLUSTERS: usize = BACKGROUND_LABEL as usize - 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColoredPoint {
    pub position: [f32; 3],
    pub color: [u8; 3],
}

/// Valid points of one frame with their display colors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ColoredCloud {
    pub points: Vec<ColoredPoint>,
    pub frame_index: usize,
}

/// Convex combination of the palette under `mu`, rounded half away from
/// zero and clamped to [0, 255].
pub fn blend_color(mu: &[f64], palette: &[[u8; 3]]) -> [u8; 3] {
    let mut acc = [0.0f64; 3];
    for (m, c) in mu.iter().zip(palette) {
        for ch in 0..3 {
            acc[ch] += m * f64::from(c[ch]);
        }
    }
    acc.map(|v| v.round().clamp(0.0, 255.0) as u8)
}

/// [`blend_color`] for every cell of `state`.
pub fn blend_colors(state: &WeightState, palette: &[[u8; 3]]) -> Vec<[u8; 3]> {
    (0..state.cells()).map(|c| blend_color(state.mu(c), palette)).collect()
}

/// Pair the valid points of `cloud` with per-cell colors.
pub fn colored_cloud(cloud: &OrganizedCloud, colors: &[[u8; 3]]) -> ColoredCloud {
    let points = cloud
        .points
        .iter()
        .zip(colors)
        .filter(|(p, _)| p.valid)
        .map(|(p, c)| ColoredPoint {
            position: [p.position.x as f32, p.position.y as f32, p.position.z as f32],
            color: *c,
        })
        .collect();
    ColoredCloud {
        points,
        frame_index: cloud.frame_index,
    }
}

/// ASCII PLY with `x y z` floats and `red green blue` uchars. Floats are
/// printed in shortest round-trip form.
pub fn write_ply<W: Write>(cloud: &ColoredCloud, mut w: W) -> io::Result<()> {
    writeln!(w, "ply")?;
    writeln!(w, "format ascii 1.0")?;
    writeln!(w, "comment frame {}", cloud.frame_index)?;
    writeln!(w, "element vertex {}", cloud.points.len())?;
    for axis in ["x", "y", "z"] {
        writeln!(w, "property float {axis}")?;
    }
    for ch in ["red", "green", "blue"] {
        writeln!(w, "property uchar {ch}")?;
    }
    writeln!(w, "end_header")?;
    for p in &cloud.points {
        let [x, y, z] = p.position;
        let [r, g, b] = p.color;
        writeln!(w, "{x:?} {y:?} {z:?} {r} {g} {b}")?;
    }
    w.flush()
}

pub fn export_ply(cloud: &ColoredCloud, path: &Path) -> Result<(), ExportError> {
    let io_err = |source| ExportError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = fs::File::create(path).map_err(io_err)?;
    write_ply(cloud, BufWriter::new(file)).map_err(io_err)
}

/// Read back a PLY written by [`write_ply`].
pub fn read_ply<R: BufRead>(r: R) -> Result<ColoredCloud, ExportError> {
    let bad = |m: &str| ExportError::Ply(m.to_string());
    let mut lines = r.lines();
    let mut next = || -> Result<String, ExportError> {
        lines
            .next()
            .ok_or_else(|| bad("unexpected end of file"))?
            .map_err(|e| ExportError::Ply(e.to_string()))
    };
    if next()? != "ply" || next()? != "format ascii 1.0" {
        return Err(bad("not an ASCII PLY file"));
    }
    let mut count = None;
    let mut frame_index = 0;
    loop {
        let line = next()?;
        if line == "end_header" {
            break;
        }
        if let Some(rest) = line.strip_prefix("element vertex ") {
            count = Some(rest.trim().parse::<usize>().map_err(|_| bad("vertex count"))?);
        } else if let Some(rest) = line.strip_prefix("comment frame ") {
            frame_index = rest.trim().parse().map_err(|_| bad("frame index"))?;
        }
    }
    let count = count.ok_or_else(|| bad("missing vertex element"))?;
    let mut points = Vec::with_capacity(count);
    for _ in 0..count {
        let line = next()?;
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 6 {
            return Err(bad("vertex line needs 6 fields"));
        }
        let pf = |s: &str| s.parse::<f32>().map_err(|_| bad("float field"));
        let pu = |s: &str| s.parse::<u8>().map_err(|_| bad("color field"));
        points.push(ColoredPoint {
            position: [pf(f[0])?, pf(f[1])?, pf(f[2])?],
            color: [pu(f[3])?, pu(f[4])?, pu(f[5])?],
        });
    }
    Ok(ColoredCloud {
        points,
        frame_index,
    })
}

/// Argmax labels as a raster; unlabeled cells are [`BACKGROUND_LABEL`].
pub fn label_raster(state: &WeightState) -> Result<LabelRaster, ExportError> {
    if state.k() > MAX_LABELED_CLUSTERS {
        return Err(ExportError::TooManyClusters {
            k: state.k(),
            max: MAX_LABELED_CLUSTERS,
        });
    }
    let data = state
        .labels()
        .iter()
        .map(|l| l.map_or(BACKGROUND_LABEL, |l| l as u8))
        .collect();
    Ok(Raster::from_vec(state.width(), state.height(), data))
}

pub fn export_labels(state: &WeightState, path: &Path) -> Result<(), ExportError> {
    let raster = label_raster(state)?;
    frame_io::write_label_png(path, &raster)?;
    Ok(())
}

/// Pixels of one detected object.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectMask {
    /// 1 inside the object, 0 elsewhere.
    pub mask: Raster<u8>,
    pub cluster_id: u8,
    pub seed_pixel: (usize, usize),
}

impl ObjectMask {
    pub fn area(&self) -> usize {
        self.mask.data.iter().filter(|m| **m == 1).count()
    }

    /// The mask scaled to 0/255 for viewing.
    pub fn to_png_raster(&self) -> LabelRaster {
        Raster::from_vec(
            self.mask.width,
            self.mask.height,
            self.mask.data.iter().map(|m| m * 255).collect(),
        )
    }
}

/// The 8-connected region around `seed` (row, col) sharing its label.
pub fn extract_object_mask(labels: &LabelRaster, seed: (usize, usize)) -> Result<ObjectMask, ExportError> {
    let (row, col) = seed;
    let (w, h) = (labels.width, labels.height);
    if row >= h || col >= w || *labels.get(row, col) == BACKGROUND_LABEL {
        return Err(ExportError::InvalidSeed { row, col });
    }
    let target = *labels.get(row, col);
    let mut mask = Raster::filled(w, h, 0u8);
    let mut queue = VecDeque::from([(row, col)]);
    *mask.get_mut(row, col) = 1;
    while let Some((r, c)) = queue.pop_front() {
        for dr in -1isize..=1 {
            for dc in -1isize..=1 {
                let (Some(nr), Some(nc)) = (r.checked_add_signed(dr), c.checked_add_signed(dc)) else {
                    continue;
                };
                if nr >= h || nc >= w || *mask.get(nr, nc) == 1 || *labels.get(nr, nc) != target {
                    continue;
                }
                *mask.get_mut(nr, nc) = 1;
                queue.push_back((nr, nc));
            }
        }
    }
    Ok(ObjectMask {
        mask,
        cluster_id: target,
        seed_pixel: seed,
    })
}

/// [`extract_object_mask`] on the current argmax labels of `state`.
pub fn extract_object_mask_from_state(
    state: &WeightState,
    seed: (usize, usize),
) -> Result<ObjectMask, ExportError> {
    extract_object_mask(&label_raster(state)?, seed)
}
