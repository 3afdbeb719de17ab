//! Block-aligned learned index segments.
//!
//! Every builder here consumes `(slice, index, record_size)` points and cuts
//! them into blocks under two objectives in strict priority order: a block's
//! payload never grows past `max_block_bytes`, and within that bound the
//! block's linear model keeps every point within `max_error` positions.
//! Each emitted [`SegmentModel`] describes exactly one block.

mod pla;
mod pra;

use serde::{Deserialize, Serialize};

use crate::error::{Result, StoreError};

pub use pla::build_pla;
pub(crate) use pra::regression_segment;
pub use pra::{build_pra, fit_least_squares, partition, partition_ranges, Partition};

/// One point fed to a builder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IndexedPoint {
    /// Key slice value.
    pub x: u64,
    /// Global position of the record in the sorted run.
    pub index: u64,
    /// Encoded size of the record in bytes.
    pub record_size: u64,
}

impl IndexedPoint {
    pub fn new(x: u64, index: u64, record_size: u64) -> Self {
        IndexedPoint { x, index, record_size }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum IndexMethod {
    /// Greedy spline segments bounded by `max_error`.
    Pla,
    /// Size-first partitioning with one least-squares fit per block.
    Pra,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BuildConfig {
    pub method: IndexMethod,
    /// Error bound for PLA, in record positions. Ignored by PRA.
    pub max_error: u32,
    /// Upper bound on a block's record payload in bytes.
    pub max_block_bytes: u64,
}

impl BuildConfig {
    pub const ERROR_CHOICES: [u32; 4] = [32, 64, 128, 256];
    pub const BLOCK_CHOICES: [u64; 4] = [4096, 8192, 16384, 32768];

    pub fn pla(max_error: u32, max_block_bytes: u64) -> Self {
        BuildConfig {
            method: IndexMethod::Pla,
            max_error,
            max_block_bytes,
        }
    }

    pub fn pra(max_block_bytes: u64) -> Self {
        BuildConfig {
            method: IndexMethod::Pra,
            max_error: 0,
            max_block_bytes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_block_bytes == 0 {
            return Err(StoreError::config("max_block_bytes must be positive"));
        }
        if self.method == IndexMethod::Pla && self.max_error == 0 {
            return Err(StoreError::config("PLA max_error must be positive"));
        }
        Ok(())
    }

    /// Whether the values sit on the grid the tuning agent explores.
    pub fn is_on_agent_grid(&self) -> bool {
        let block_ok = Self::BLOCK_CHOICES.contains(&self.max_block_bytes);
        match self.method {
            IndexMethod::Pra => block_ok,
            IndexMethod::Pla => block_ok && Self::ERROR_CHOICES.contains(&self.max_error),
        }
    }
}

impl Default for BuildConfig {
    fn default() -> Self {
        BuildConfig::pla(64, 4096)
    }
}

/// A line `a + b·(x − x0)` over key slices, in index units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Line {
    pub x0: u64,
    pub a: f64,
    pub b: f64,
}

impl Line {
    /// The line through two points; flat when they share a slice.
    pub fn through(p: &IndexedPoint, q: &IndexedPoint) -> Self {
        let b = if q.x > p.x {
            (q.index - p.index) as f64 / (q.x - p.x) as f64
        } else {
            0.0
        };
        Line {
            x0: p.x,
            a: p.index as f64,
            b,
        }
    }

    pub fn flat(p: &IndexedPoint) -> Self {
        Line {
            x0: p.x,
            a: p.index as f64,
            b: 0.0,
        }
    }

    #[inline]
    pub fn predict(&self, x: u64) -> f64 {
        self.a + self.b * signed_delta(x, self.x0)
    }
}

#[inline]
pub(crate) fn signed_delta(x: u64, x0: u64) -> f64 {
    if x >= x0 {
        (x - x0) as f64
    } else {
        -((x0 - x) as f64)
    }
}

/// Rounds to the nearest integer, ties toward negative infinity.
#[inline]
pub fn round_position(prediction: f64) -> f64 {
    // `ceil` is a libm call on baseline x86-64. Adding and removing
    // 1.5 * 2^52 rounds to an integer in two instructions for |t| < 2^51.
    const SHIFT: f64 = 6_755_399_441_055_744.0;
    let t = prediction - 0.5;
    let r = if t.abs() < 2_251_799_813_685_248.0 {
        (t + SHIFT) - SHIFT
    } else if t.abs() < 4_503_599_627_370_496.0 {
        t as i64 as f64
    } else {
        // Integral already, or NaN.
        return t;
    };
    if r < t {
        r + 1.0
    } else {
        r
    }
}

/// Distance in positions between a rounded prediction and the true index.
#[inline]
pub fn rounded_distance(prediction: f64, index: u64) -> u64 {
    (round_position(prediction) - index as f64).abs() as u64
}

/// Maximum rounded-prediction distance of `points` from `line`.
pub fn ape(line: &Line, points: &[IndexedPoint]) -> u64 {
    // Distances are integral, so the maximum can stay in f64 and convert once.
    let mut worst = 0.0f64;
    for p in points {
        let d = (round_position(line.predict(p.x)) - p.index as f64).abs();
        if d > worst {
            worst = d;
        }
    }
    worst as u64
}

/// One linear model covering one block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentModel {
    /// Anchor slice of the segment's first point.
    pub x0: u64,
    /// Predicted index at `x0`.
    pub a: f64,
    pub b: f64,
    /// Largest realized distance of any covered point from the rounded prediction.
    pub max_error: u32,
    /// Number of records stored in blocks before this segment's block.
    pub offset: u64,
    pub block_id: u32,
}

impl SegmentModel {
    pub fn line(&self) -> Line {
        Line {
            x0: self.x0,
            a: self.a,
            b: self.b,
        }
    }

    #[inline]
    pub fn predict_raw(&self, x: u64) -> f64 {
        self.line().predict(x)
    }

    #[inline]
    pub fn predict_index(&self, x: u64) -> u64 {
        let p = round_position(self.predict_raw(x));
        if p <= 0.0 {
            0
        } else {
            p as u64
        }
    }
}

/// Result of routing a slice through a segment list.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Prediction {
    pub segment: usize,
    pub block_id: u32,
    pub predicted_index: u64,
    pub max_error: u32,
    pub offset: u64,
}

impl Prediction {
    pub fn from_segment(segment: usize, seg: &SegmentModel, x: u64) -> Self {
        Prediction {
            segment,
            block_id: seg.block_id,
            predicted_index: seg.predict_index(x),
            max_error: seg.max_error,
            offset: seg.offset,
        }
    }
}

/// Index of the last segment whose anchor is `<= x`, or 0 below the first anchor.
pub fn locate_segment(segments: &[SegmentModel], x: u64) -> usize {
    segments.partition_point(|s| s.x0 <= x).saturating_sub(1)
}

/// Routes `x` to its segment by binary search and evaluates that segment.
pub fn predict(segments: &[SegmentModel], x: u64) -> Prediction {
    assert!(!segments.is_empty(), "predict on an empty segment list");
    let i = locate_segment(segments, x);
    Prediction::from_segment(i, &segments[i], x)
}

/// Closes the block `points` as a segment whose line runs from its first
/// to its last point.
pub(crate) fn spline_segment(points: &[IndexedPoint], offset: u64, block_id: u32) -> SegmentModel {
    let first = &points[0];
    let last = &points[points.len() - 1];
    let line = Line::through(first, last);
    SegmentModel {
        x0: first.x,
        a: line.a,
        b: line.b,
        max_error: clamp_error(ape(&line, points)),
        offset,
        block_id,
    }
}

pub(crate) fn clamp_error(e: u64) -> u32 {
    e.min(u32::MAX as u64) as u32
}

/// Points built from consecutive slices with unit sizes; handy in tests.
pub fn points_from_slices(xs: &[u64], record_size: u64) -> Vec<IndexedPoint> {
    xs.iter()
        .enumerate()
        .map(|(i, &x)| IndexedPoint::new(x, i as u64, record_size))
        .collect()
}
