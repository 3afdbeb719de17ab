//! Data block layout:
//!
//! ```text
//! record_count u32 | kvs_addr: record_count × u32 | kvs_data | xxh64 u64
//! ```
//!
//! `kvs_addr[i]` is the offset of record `i` within `kvs_data`.

use std::cmp::Ordering;

use xxhash_rust::xxh64::xxh64;

use crate::error::{Result, StoreError};
use crate::index::LookupHint;
use crate::record::{common_prefix_len, compare_counted, compare_from, Record, RecordView};

use super::ProbeStats;

pub(crate) const CHECKSUM_BYTES: usize = 8;

/// Encodes `records` as one block.
pub(crate) fn encode_block(records: &[Record], out: &mut Vec<u8>) {
    let start = out.len();
    out.extend_from_slice(&(records.len() as u32).to_le_bytes());
    let mut addr = 0u32;
    for r in records {
        out.extend_from_slice(&addr.to_le_bytes());
        addr += r.encoded_size() as u32;
    }
    for r in records {
        r.encode_into(out);
    }
    let sum = xxh64(&out[start..], 0);
    out.extend_from_slice(&sum.to_le_bytes());
}

/// A block read from disk, checksum verified.
#[derive(Debug, Clone)]
pub struct Block {
    bytes: Vec<u8>,
    count: usize,
    /// Global index of the block's first record.
    pub offset: u64,
}

impl Block {
    pub(crate) fn decode(bytes: Vec<u8>, offset: u64) -> Result<Self> {
        if bytes.len() < 4 + CHECKSUM_BYTES {
            return Err(StoreError::corrupt("block shorter than its header"));
        }
        let body = bytes.len() - CHECKSUM_BYTES;
        let stored = u64::from_le_bytes(bytes[body..].try_into().unwrap());
        if xxh64(&bytes[..body], 0) != stored {
            return Err(StoreError::corrupt("block checksum mismatch"));
        }
        let count = u32::from_le_bytes(bytes[..4].try_into().unwrap()) as usize;
        let data_start = count
            .checked_mul(4)
            .and_then(|n| n.checked_add(4))
            .filter(|&n| n <= body)
            .ok_or_else(|| StoreError::corrupt("block address array out of bounds"))?;
        if count == 0 {
            return Err(StoreError::corrupt("empty block"));
        }
        let block = Block { bytes, count, offset };
        // Addresses must be strictly increasing and every record must parse
        // inside kvs_data, so later probes can index without checks.
        let data_len = body - data_start;
        let mut prev = None;
        for i in 0..count {
            let a = block.addr(i);
            if prev.is_some_and(|p| a <= p) || a >= data_len {
                return Err(StoreError::corrupt("kvs_addr not strictly increasing"));
            }
            prev = Some(a);
            let end = if i + 1 < count { block.addr(i + 1) } else { data_len };
            let view = RecordView::parse(&block.bytes[data_start + a..data_start + end])?;
            if view.encoded_size() != end - a {
                return Err(StoreError::corrupt("record does not fill its slot"));
            }
        }
        Ok(block)
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn byte_len(&self) -> usize {
        self.bytes.len()
    }

    fn addr(&self, i: usize) -> usize {
        let p = 4 + 4 * i;
        u32::from_le_bytes(self.bytes[p..p + 4].try_into().unwrap()) as usize
    }

    fn data(&self) -> &[u8] {
        &self.bytes[4 + 4 * self.count..self.bytes.len() - CHECKSUM_BYTES]
    }

    pub fn record(&self, i: usize) -> RecordView<'_> {
        RecordView::parse(&self.data()[self.addr(i)..]).expect("validated on decode")
    }

    pub fn key(&self, i: usize) -> &[u8] {
        self.record(i).key
    }

    /// First position whose key is `>= key`.
    pub fn lower_bound(&self, key: &[u8]) -> usize {
        let (mut lo, mut hi) = (0, self.count);
        while lo < hi {
            let mid = (lo + hi) / 2;
            if self.key(mid) < key {
                lo = mid + 1;
            } else {
                hi = mid;
            }
        }
        lo
    }

    /// Full-key binary search over the whole block.
    pub fn binary_search(&self, key: &[u8], stats: &mut ProbeStats) -> Option<usize> {
        let (mut lo, mut hi) = (0, self.count);
        while lo < hi {
            let mid = (lo + hi) / 2;
            let (ord, bytes) = compare_counted(self.key(mid), key);
            stats.key_comparisons += 1;
            stats.bytes_compared += bytes as u64;
            match ord {
                Ordering::Less => lo = mid + 1,
                Ordering::Greater => hi = mid,
                Ordering::Equal => return Some(mid),
            }
        }
        None
    }
}

/// Searches the window the hint allows for `key`.
///
/// Every key in the block shares its first `min(prefix_len, block_lcp)`
/// bytes, so the probes compare from there on: the 8-byte slice as an
/// integer, then the remaining bytes. A query key that does not share those
/// bytes can still steer the search, but it can never be reported found,
/// because the skipped bytes are checked once before accepting a match.
pub fn last_mile_search(block: &Block, hint: &LookupHint, key: &[u8], stats: &mut ProbeStats) -> Option<usize> {
    let len = block.len();
    let center = hint.predicted_index.saturating_sub(hint.offset).min(len as u64 - 1) as usize;
    let err = hint.max_error as usize;
    let mut lo = center.saturating_sub(err);
    let mut hi = center.saturating_add(err).min(len - 1) + 1;

    let first = block.key(0);
    let last = block.key(len - 1);
    let skip = hint.prefix_len.min(common_prefix_len(first, last));

    while lo < hi {
        let mid = (lo + hi) / 2;
        let probe = block.key(mid);
        let (ord, bytes) = compare_from(probe, key, skip);
        stats.key_comparisons += 1;
        stats.bytes_compared += bytes as u64;
        match ord {
            Ordering::Less => lo = mid + 1,
            Ordering::Greater => hi = mid,
            Ordering::Equal => {
                stats.bytes_compared += skip as u64;
                let same_prefix = key.len() >= skip && probe[..skip] == key[..skip];
                return same_prefix.then_some(mid);
            }
        }
    }
    None
}
