use std::ops::Range;

use super::{clamp_error, round_position, signed_delta, BuildConfig, IndexedPoint, Line, SegmentModel};
use crate::error::Result;
use crate::record::Record;

/// A run of records that fits one block, with the count of records before it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition<'a> {
    pub records: &'a [Record],
    pub offset: u64,
}

/// Greedy left-to-right fill of blocks holding at most `max_bytes` of
/// payload. A single record larger than the budget gets a block of its own.
pub fn partition_ranges(sizes: &[u64], max_bytes: u64) -> Vec<Range<usize>> {
    ranges_by_size(sizes.iter().copied(), max_bytes)
}

fn ranges_by_size(sizes: impl ExactSizeIterator<Item = u64>, max_bytes: u64) -> Vec<Range<usize>> {
    let n = sizes.len();
    let mut out = Vec::new();
    let mut start = 0usize;
    let mut bytes = 0u64;
    for (i, size) in sizes.enumerate() {
        if i > start && bytes.saturating_add(size) > max_bytes {
            out.push(start..i);
            start = i;
            bytes = 0;
        }
        bytes = bytes.saturating_add(size);
    }
    if start < n {
        out.push(start..n);
    }
    out
}

pub fn partition(records: &[Record], max_bytes: u64) -> Vec<Partition<'_>> {
    let sizes: Vec<u64> = records.iter().map(|r| r.encoded_size() as u64).collect();
    partition_ranges(&sizes, max_bytes)
        .into_iter()
        .map(|r| Partition {
            offset: r.start as u64,
            records: &records[r],
        })
        .collect()
}

/// Ordinary least squares of index on slice, anchored at the first point.
///
/// Means first, then centered sums, so large slice values do not cancel.
pub fn fit_least_squares(points: &[IndexedPoint]) -> Line {
    let x0 = points[0].x;
    if points.len() == 1 {
        return Line::flat(&points[0]);
    }
    let n = points.len() as f64;
    let (mut su, mut sy) = (0.0f64, 0.0f64);
    for p in points {
        su += signed_delta(p.x, x0);
        sy += p.index as f64;
    }
    let (mean_u, mean_y) = (su / n, sy / n);
    let (mut sxx, mut sxy) = (0.0f64, 0.0f64);
    for p in points {
        let du = signed_delta(p.x, x0) - mean_u;
        sxx += du * du;
        sxy += du * (p.index as f64 - mean_y);
    }
    let b = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    Line {
        x0,
        a: mean_y - b * mean_u,
        b,
    }
}

/// [`fit_least_squares`] over a block with consecutive indices, leaving each
/// point's slice offset from the anchor in `us` for the error pass.
fn fit_with(points: &[IndexedPoint], us: &mut Vec<f64>) -> Line {
    let x0 = points[0].x;
    us.clear();
    if points.len() == 1 {
        us.push(0.0);
        return Line::flat(&points[0]);
    }
    // Indices within a block are consecutive, so each y is the previous
    // plus one; the sums are bit-identical to converting every index.
    debug_assert!(points.windows(2).all(|w| w[1].index == w[0].index + 1));
    let n = points.len() as f64;
    let y0 = points[0].index as f64;
    let (mut su, mut sy, mut y) = (0.0f64, 0.0f64, y0);
    for p in points {
        let u = signed_delta(p.x, x0);
        us.push(u);
        su += u;
        sy += y;
        y += 1.0;
    }
    let (mean_u, mean_y) = (su / n, sy / n);
    let (mut sxx, mut sxy, mut y) = (0.0f64, 0.0f64, y0);
    for &u in us.iter() {
        let du = u - mean_u;
        sxx += du * du;
        sxy += du * (y - mean_y);
        y += 1.0;
    }
    let b = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    Line {
        x0,
        a: mean_y - b * mean_u,
        b,
    }
}

/// Size-first partitioning, then one least-squares line per block with its
/// realized error recorded.
pub fn build_pra(points: &[IndexedPoint], config: &BuildConfig) -> Result<Vec<SegmentModel>> {
    config.validate()?;
    let mut us = Vec::new();
    let segments = ranges_by_size(points.iter().map(|p| p.record_size), config.max_block_bytes)
        .into_iter()
        .enumerate()
        .map(|(id, r)| segment_with(&points[r.clone()], r.start as u64, id as u32, &mut us))
        .collect();
    Ok(segments)
}

pub(crate) fn regression_segment(points: &[IndexedPoint], offset: u64, block_id: u32) -> SegmentModel {
    segment_with(points, offset, block_id, &mut Vec::new())
}

fn segment_with(points: &[IndexedPoint], offset: u64, block_id: u32, us: &mut Vec<f64>) -> SegmentModel {
    let line = fit_with(points, us);
    // Same arithmetic as `ape`, reusing the converted offsets.
    let mut worst = 0.0f64;
    let mut y = points[0].index as f64;
    for &u in us.iter() {
        let d = (round_position(line.a + line.b * u) - y).abs();
        if d > worst {
            worst = d;
        }
        y += 1.0;
    }
    SegmentModel {
        x0: line.x0,
        a: line.a,
        b: line.b,
        max_error: clamp_error(worst as u64),
        offset,
        block_id,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ape, build_pla, points_from_slices, rounded_distance};

    fn rec(key_len: usize, value_len: usize) -> Record {
        Record::new(vec![b'k'; key_len], vec![0; value_len])
    }

    #[test]
    fn partition_examples() {
        let recs: Vec<Record> = (0..4).map(|_| rec(42, 50)).collect();
        assert_eq!(recs[0].encoded_size(), 100);
        let parts = partition(&recs, 250);
        assert_eq!(parts.iter().map(|p| p.records.len()).collect::<Vec<_>>(), vec![2, 2]);
        assert_eq!(parts.iter().map(|p| p.offset).collect::<Vec<_>>(), vec![0, 2]);

        let big = vec![rec(10, 4982)];
        let parts = partition(&big, 4096);
        assert_eq!(parts.len(), 1);
        assert_eq!(parts[0].records.len(), 1);

        let tiny: Vec<Record> = (0..7).map(|_| rec(1, 0)).collect();
        assert_eq!(tiny[0].encoded_size(), 9);
        let parts = partition(&tiny, 32);
        assert_eq!(parts.iter().map(|p| p.records.len()).collect::<Vec<_>>(), vec![3, 3, 1]);
    }

    #[test]
    fn partition_never_emits_empty() {
        let sizes = [5000u64, 10, 6000, 6000, 1];
        let parts = partition_ranges(&sizes, 4096);
        assert_eq!(parts, vec![0..1, 1..2, 2..3, 3..4, 4..5]);
        assert_eq!(partition_ranges(&[10, 6000, 1, 1], 4096), vec![0..1, 1..2, 2..4]);
        assert!(partition_ranges(&[], 10).is_empty());
    }

    #[test]
    fn least_squares_by_hand() {
        let pts = vec![IndexedPoint::new(0, 0, 1), IndexedPoint::new(1, 2, 1), IndexedPoint::new(2, 2, 1)];
        let line = fit_least_squares(&pts);
        assert!((line.b - 1.0).abs() < 1e-12);
        assert!((line.a - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(ape(&line, &pts), 1);
    }

    #[test]
    fn collinear_partition_has_zero_error() {
        let pts = points_from_slices(&(0..500).map(|i| 1_000_000 + 3 * i).collect::<Vec<_>>(), 40);
        let segs = build_pra(&pts, &BuildConfig::pra(4096)).unwrap();
        assert!(segs.len() > 1);
        assert!(segs.iter().all(|s| s.max_error == 0));
    }

    #[test]
    fn single_point_partition() {
        let pts = vec![IndexedPoint::new(7, 0, 9000), IndexedPoint::new(9, 1, 9000)];
        let segs = build_pra(&pts, &BuildConfig::pra(4096)).unwrap();
        assert_eq!(segs.len(), 2);
        assert_eq!((segs[1].a, segs[1].b, segs[1].max_error), (1.0, 0.0, 0));
    }

    #[test]
    fn trend_break_hurts_regression() {
        // Dense run then a sparse run inside one block-sized window.
        let mut xs: Vec<u64> = (0..50).collect();
        xs.extend((1..=50).map(|i| 49 + i * 10_000));
        let pts = points_from_slices(&xs, 10);
        let pra = build_pra(&pts, &BuildConfig::pra(10_000)).unwrap();
        let pla = build_pla(&pts, &BuildConfig::pla(4, 10_000)).unwrap();
        assert_eq!(pra.len(), 1);
        let pla_max = pla.iter().map(|s| s.max_error).max().unwrap();
        assert!(pra[0].max_error > pla_max);
        for p in &pts {
            assert!(rounded_distance(pra[0].predict_raw(p.x), p.index) <= pra[0].max_error as u64);
        }
    }

    #[test]
    fn duplicate_slices_in_regression() {
        let pts = points_from_slices(&[3, 3, 3, 8, 8, 20], 10);
        let line = fit_least_squares(&pts);
        assert!(line.b.is_finite() && line.a.is_finite());
        let all_same = points_from_slices(&[4, 4, 4], 10);
        let flat = fit_least_squares(&all_same);
        assert_eq!(flat.b, 0.0);
        assert!((flat.a - 1.0).abs() < 1e-12);
    }
}
