//! Straight-line transcriptions of the three block-building procedures.
//! Nothing here calls into the library's builders; the only shared types
//! are the plain point and segment structs used to compare outputs.

use doblix::{IndexedPoint, Record, SegmentModel};

/// `(x, index)` with the record's byte size carried along.
#[derive(Clone, Copy)]
struct Kv {
    k: u64,
    index: u64,
    size: u64,
}

fn round_nearest_down(p: f64) -> f64 {
    // Ties go toward -inf: 2.5 -> 2.
    (p - 0.5).ceil()
}

/// Line through two points `(k, index)`; a vertical pair is read as the
/// horizontal line through the first.
fn line(first: Kv, second: Kv) -> (u64, f64, f64) {
    let slope = if second.k == first.k {
        0.0
    } else {
        (second.index - first.index) as f64 / (second.k - first.k) as f64
    };
    (first.k, first.index as f64, slope)
}

fn ape(l: (u64, f64, f64), set: &[Kv]) -> u64 {
    let (x0, a, b) = l;
    let mut worst = 0u64;
    for p in set {
        let pred = a + b * (p.k - x0) as f64;
        let d = (round_nearest_down(pred) - p.index as f64).abs() as u64;
        if d > worst {
            worst = d;
        }
    }
    worst
}

fn size_of(block: &[Kv]) -> u64 {
    let mut s = 0u64;
    for p in block {
        s += p.size;
    }
    s
}

/// Dual-objective PLA. The size test runs first and asks whether the block
/// would outgrow `b_max` with the incoming pair; the error test compares the
/// line from the block's first point to the incoming pair against every
/// point already in the block.
#[allow(clippy::if_same_then_else)] // the two closing branches are kept apart on purpose
pub fn pla(points: &[IndexedPoint], e: u64, b_max: u64) -> Vec<SegmentModel> {
    let d: Vec<Kv> = points
        .iter()
        .map(|p| Kv {
            k: p.x,
            index: p.index,
            size: p.record_size,
        })
        .collect();
    let mut r: Vec<(Vec<Kv>, u64)> = Vec::new();
    let mut offset = 0u64;
    let mut b_curr: Vec<Kv> = vec![d[0]];
    let mut index = 1usize;
    while index < d.len() {
        let kv = d[index];
        if size_of(&b_curr) + kv.size > b_max {
            r.push((b_curr.clone(), offset));
            offset += b_curr.len() as u64;
            b_curr = vec![kv];
        } else if b_curr.len() > 1 && ape(line(b_curr[0], kv), &b_curr) >= e {
            r.push((b_curr.clone(), offset));
            offset += b_curr.len() as u64;
            b_curr = vec![kv];
        } else {
            b_curr.push(kv);
        }
        index += 1;
    }
    r.push((b_curr.clone(), offset));

    let mut out = Vec::new();
    for (i, (block, off)) in r.iter().enumerate() {
        let first = block[0];
        let last = block[block.len() - 1];
        let l = line(first, last);
        out.push(SegmentModel {
            x0: first.k,
            a: l.1,
            b: l.2,
            max_error: ape(l, block) as u32,
            offset: *off,
            block_id: i as u32,
        });
    }
    out
}

/// Greedy partition. A pair that would push a non-empty partition past `b`
/// closes it; an empty partition is never emitted.
pub fn partition(sizes: &[u64], b: u64) -> Vec<(Vec<usize>, u64)> {
    let mut p: Vec<(Vec<usize>, u64)> = Vec::new();
    let mut t: Vec<usize> = Vec::new();
    let mut t_bytes = 0u64;
    let mut offset = 0u64;
    for (i, &kv) in sizes.iter().enumerate() {
        if t_bytes + kv > b && !t.is_empty() {
            p.push((t.clone(), offset));
            offset += t.len() as u64;
            t = Vec::new();
            t_bytes = 0;
        }
        t.push(i);
        t_bytes += kv;
    }
    if !t.is_empty() {
        p.push((t, offset));
    }
    p
}

pub fn partition_records(records: &[Record], b: u64) -> Vec<(Vec<usize>, u64)> {
    let sizes: Vec<u64> = records.iter().map(|r| (r.key.len() + r.value.len() + 8) as u64).collect();
    partition(&sizes, b)
}

/// Least squares of index on `k − k_first`: means, then the centered sums
/// `b = Σ(u−ū)(y−ȳ) / Σ(u−ū)²`, `a = ȳ − b·ū`.
fn linear_regression(par: &[Kv]) -> (u64, f64, f64) {
    let x0 = par[0].k;
    let n = par.len() as f64;
    let mut sum_u = 0.0f64;
    let mut sum_y = 0.0f64;
    for p in par {
        sum_u += (p.k - x0) as f64;
        sum_y += p.index as f64;
    }
    let u_bar = sum_u / n;
    let y_bar = sum_y / n;
    let mut num = 0.0f64;
    let mut den = 0.0f64;
    for p in par {
        let du = (p.k - x0) as f64 - u_bar;
        den += du * du;
        num += du * (p.index as f64 - y_bar);
    }
    let b = if den > 0.0 { num / den } else { 0.0 };
    (x0, y_bar - b * u_bar, b)
}

/// Dual-objective PRA: partition by size, then one regression per partition
/// of more than one point; single points get a flat line at their index.
pub fn pra(points: &[IndexedPoint], b_max: u64) -> Vec<SegmentModel> {
    let d: Vec<Kv> = points
        .iter()
        .map(|p| Kv {
            k: p.x,
            index: p.index,
            size: p.record_size,
        })
        .collect();
    let sizes: Vec<u64> = d.iter().map(|p| p.size).collect();
    let mut m = Vec::new();
    for (i, (members, offset)) in partition(&sizes, b_max).iter().enumerate() {
        let par: Vec<Kv> = members.iter().map(|&j| d[j]).collect();
        let (x0, a, b, e) = if par.len() > 1 {
            let l = linear_regression(&par);
            (l.0, l.1, l.2, ape(l, &par))
        } else {
            (par[0].k, par[0].index as f64, 0.0, 0)
        };
        m.push(SegmentModel {
            x0,
            a,
            b,
            max_error: e as u32,
            offset: *offset,
            block_id: i as u32,
        });
    }
    m
}

/// Bitwise segment equality, so `-0.0` and `0.0` or NaN payloads cannot hide a
/// difference.
pub fn same_segments(a: &[SegmentModel], b: &[SegmentModel]) -> bool {
    a.len() == b.len()
        && a.iter().zip(b).all(|(s, t)| {
            s.x0 == t.x0
                && s.a.to_bits() == t.a.to_bits()
                && s.b.to_bits() == t.b.to_bits()
                && s.max_error == t.max_error
                && s.offset == t.offset
                && s.block_id == t.block_id
        })
}
