use crate::model::SegmentModel;

/// Maps the top bits of `slice − min_anchor` to a range of segments.
///
/// Entry `r` holds the number of segments whose anchor prefix is below `r`,
/// so the segments sharing prefix `r` are `table[r]..table[r + 1]`. The table
/// has `2^bits + 1` entries; `bits` is capped by the node's level budget and
/// by the segment count, so a node with few segments keeps a small table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RadixTable {
    bits: u8,
    shift: u32,
    min: u64,
    max: u64,
    table: Vec<u32>,
}

#[inline]
fn bucket(delta: u64, shift: u32) -> u64 {
    delta.checked_shr(shift).unwrap_or(0)
}

pub(crate) fn bit_length(v: u64) -> u32 {
    64 - v.leading_zeros()
}

/// Radix bit budget by trie level: 18 at the root, 12 below it, 8 deeper.
pub fn radix_budget(level: u32) -> u8 {
    match level {
        0 => 18,
        1 => 12,
        _ => 8,
    }
}

impl RadixTable {
    pub fn build(segments: &[SegmentModel], budget: u8) -> Self {
        let bits = (bit_length(segments.len().saturating_sub(1) as u64) as u8).min(budget);
        Self::with_bits(segments, bits)
    }

    pub(crate) fn with_bits(segments: &[SegmentModel], bits: u8) -> Self {
        assert!(!segments.is_empty());
        let min = segments[0].x0;
        let max = segments[segments.len() - 1].x0;
        let shift = bit_length(max - min).saturating_sub(bits as u32);
        let slots = (1usize << bits) + 1;
        let mut table = Vec::with_capacity(slots);
        let mut seg = 0usize;
        for r in 0..slots {
            while seg < segments.len() && (bucket(segments[seg].x0 - min, shift) as usize) < r {
                seg += 1;
            }
            table.push(seg as u32);
        }
        RadixTable {
            bits,
            shift,
            min,
            max,
            table,
        }
    }

    pub fn bits(&self) -> u8 {
        self.bits
    }

    pub fn entries(&self) -> &[u32] {
        &self.table
    }

    /// Index of the last segment whose anchor is `<= x` (0 below the first).
    pub fn locate(&self, segments: &[SegmentModel], x: u64) -> usize {
        if x < self.min {
            return 0;
        }
        if x >= self.max {
            return segments.len() - 1;
        }
        let r = bucket(x - self.min, self.shift) as usize;
        let lo = self.table[r] as usize;
        let hi = self.table[r + 1] as usize;
        let pos = lo + segments[lo..hi].partition_point(|s| s.x0 <= x);
        pos.saturating_sub(1)
    }
}
