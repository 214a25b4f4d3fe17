//! Conversion of real-valued maps to 8-bit integer maps, and joint-map layouts.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::Grid;
use crate::sources::Dataset;

#[derive(Debug, Error, PartialEq)]
pub enum AdaptError {
    #[error("cannot compute range statistics of an empty dataset")]
    EmptyDataset,
    #[error("height mismatch: {0} vs {1}")]
    HeightMismatch(usize, usize),
    #[error("shape mismatch: {0:?} vs {1:?}")]
    ShapeMismatch((usize, usize), (usize, usize)),
    #[error("joint map width {width} cannot be split at {split}")]
    BadSplit { width: usize, split: usize },
    #[error("unknown concat mode `{0}`")]
    UnknownConcatMode(String),
}

/// Which source of a paired sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    X,
    Y,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RangeStats {
    pub min: f64,
    pub max: f64,
}

impl RangeStats {
    pub fn is_degenerate(&self) -> bool {
        self.max <= self.min
    }

    /// The affine map `v ↦ (v − min)·255/(max − min)` for these statistics.
    /// Degenerate ranges get `scale = 1` and send every value to 0.
    pub fn affine(&self) -> AffineRecord {
        if self.is_degenerate() {
            AffineRecord {
                offset: self.min,
                scale: 1.0,
                clamp_count: 0,
                degenerate: true,
            }
        } else {
            AffineRecord {
                offset: self.min,
                scale: 255.0 / (self.max - self.min),
                clamp_count: 0,
                degenerate: false,
            }
        }
    }
}

/// Provenance of a rescaling: `q = clamp(round_half_up((v − offset)·scale), 0, 255)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineRecord {
    pub offset: f64,
    pub scale: f64,
    /// Number of values that fell outside `[0, 255]` before clamping.
    pub clamp_count: u64,
    #[serde(default)]
    pub degenerate: bool,
}

impl AffineRecord {
    #[inline]
    pub fn quantize(&self, v: f64) -> (i32, bool) {
        if self.degenerate {
            return (0, false);
        }
        let q = ((v - self.offset) * self.scale + 0.5).floor();
        if q < 0.0 {
            (0, true)
        } else if q > 255.0 {
            (255, true)
        } else {
            (q as i32, false)
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdaptedMap {
    pub values: Grid<i32>,
    pub affine: AffineRecord,
    /// Set when the statistics had `max == min`; `values` is then all zero.
    pub degenerate_range: bool,
}

/// Global minimum and maximum of one side over every sample.
pub fn dataset_stats(dataset: &Dataset, side: Side) -> Result<RangeStats, AdaptError> {
    if dataset.is_empty() {
        return Err(AdaptError::EmptyDataset);
    }
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for s in &dataset.samples {
        let g = match side {
            Side::X => &s.x,
            Side::Y => &s.y,
        };
        for &v in g.as_slice() {
            min = min.min(v as f64);
            max = max.max(v as f64);
        }
    }
    Ok(RangeStats { min, max })
}

pub fn rescale_quantize(map: &Grid<f32>, stats: RangeStats) -> AdaptedMap {
    quantize_with(map, stats.affine())
}

/// Applies a previously recorded affine map. `clamp_count` of the result
/// counts values of this map that left `[0, 255]`.
pub fn quantize_with(map: &Grid<f32>, affine: AffineRecord) -> AdaptedMap {
    let mut clamped = 0u64;
    let values = map.map(|v| {
        let (q, c) = affine.quantize(v as f64);
        clamped += c as u64;
        q
    });
    AdaptedMap {
        values,
        affine: AffineRecord {
            clamp_count: clamped,
            ..affine
        },
        degenerate_range: affine.degenerate,
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConcatMode {
    /// X and Y side by side: `[X | Y]`.
    Tiling,
    /// Column interleave: `x0 y0 x1 y1 ...`.
    #[default]
    Quilting,
}

impl fmt::Display for ConcatMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ConcatMode::Tiling => "tiling",
            ConcatMode::Quilting => "quilting",
        })
    }
}

impl FromStr for ConcatMode {
    type Err = AdaptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tiling" | "tile" => Ok(ConcatMode::Tiling),
            "quilting" | "quilt" => Ok(ConcatMode::Quilting),
            other => Err(AdaptError::UnknownConcatMode(other.to_string())),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct JointMap {
    pub values: Grid<i32>,
    pub mode: ConcatMode,
    /// Width of the X constituent.
    pub x_cols: usize,
}

impl JointMap {
    /// Recovers the (X, Y) constituents.
    pub fn split(&self) -> Result<(Grid<i32>, Grid<i32>), AdaptError> {
        match self.mode {
            ConcatMode::Tiling => detile(&self.values, self.x_cols),
            ConcatMode::Quilting => dequilt(&self.values),
        }
    }
}

pub fn concat(x: &Grid<i32>, y: &Grid<i32>, mode: ConcatMode) -> Result<JointMap, AdaptError> {
    match mode {
        ConcatMode::Tiling => concat_tile(x, y),
        ConcatMode::Quilting => concat_quilt(x, y),
    }
}

pub fn concat_tile(x: &Grid<i32>, y: &Grid<i32>) -> Result<JointMap, AdaptError> {
    if x.rows() != y.rows() {
        return Err(AdaptError::HeightMismatch(x.rows(), y.rows()));
    }
    let (xc, yc) = (x.cols(), y.cols());
    let values = Grid::from_fn(x.rows(), xc + yc, |r, c| if c < xc { x.get(r, c) } else { y.get(r, c - xc) });
    Ok(JointMap {
        values,
        mode: ConcatMode::Tiling,
        x_cols: xc,
    })
}

pub fn concat_quilt(x: &Grid<i32>, y: &Grid<i32>) -> Result<JointMap, AdaptError> {
    if x.shape() != y.shape() {
        return Err(AdaptError::ShapeMismatch(x.shape(), y.shape()));
    }
    let values = Grid::from_fn(x.rows(), 2 * x.cols(), |r, c| {
        if c % 2 == 0 {
            x.get(r, c / 2)
        } else {
            y.get(r, c / 2)
        }
    });
    Ok(JointMap {
        values,
        mode: ConcatMode::Quilting,
        x_cols: x.cols(),
    })
}

pub fn detile(joint: &Grid<i32>, x_cols: usize) -> Result<(Grid<i32>, Grid<i32>), AdaptError> {
    if x_cols > joint.cols() {
        return Err(AdaptError::BadSplit {
            width: joint.cols(),
            split: x_cols,
        });
    }
    let x = Grid::from_fn(joint.rows(), x_cols, |r, c| joint.get(r, c));
    let y = Grid::from_fn(joint.rows(), joint.cols() - x_cols, |r, c| joint.get(r, c + x_cols));
    Ok((x, y))
}

pub fn dequilt(joint: &Grid<i32>) -> Result<(Grid<i32>, Grid<i32>), AdaptError> {
    if joint.cols() % 2 != 0 {
        return Err(AdaptError::BadSplit {
            width: joint.cols(),
            split: joint.cols() / 2,
        });
    }
    let half = joint.cols() / 2;
    let x = Grid::from_fn(joint.rows(), half, |r, c| joint.get(r, 2 * c));
    let y = Grid::from_fn(joint.rows(), half, |r, c| joint.get(r, 2 * c + 1));
    Ok((x, y))
}
