//! Immutable sorted tables.
//!
//! File layout, little-endian:
//!
//! ```text
//! [data blocks][block map][baseline index][model][stats JSON][footer]
//! footer := block_map_off u64 | index_off u64 | model_off u64 | stats_off u64 | footer_off u64
//!         | "DBSS" | version u8
//! ```
//!
//! Each region runs up to the next offset. A Learned table has an empty
//! baseline index region and a FixedBinary table an empty model region.
//! The block map and baseline index each end with an xxh64 of their bytes.

mod block;
mod reader;
mod writer;

use serde::{Deserialize, Serialize};

pub use block::{last_mile_search, Block};
pub use reader::{inspect, Lookup, SSTableHandle, TableIter};
pub use writer::write_sstable;

pub const SST_MAGIC: &[u8; 4] = b"DBSS";
pub const SST_VERSION: u8 = 1;
pub(crate) const FOOTER_BYTES: usize = 5 * 8 + 4 + 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum IndexKind {
    /// Learned trie over block-aligned segments.
    Learned,
    /// Fixed-size blocks with a binary-searched `(last_key, block_offset)` index.
    FixedBinary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Footer {
    pub block_map_offset: u64,
    pub index_offset: u64,
    pub model_offset: u64,
    pub stats_offset: u64,
    pub footer_offset: u64,
}

impl Footer {
    fn encode(&self, out: &mut Vec<u8>) {
        for v in [
            self.block_map_offset,
            self.index_offset,
            self.model_offset,
            self.stats_offset,
            self.footer_offset,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(SST_MAGIC);
        out.push(SST_VERSION);
    }
}

/// Where one data block lives and what it holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct BlockMeta {
    pub file_offset: u64,
    pub byte_len: u32,
    /// Global index of the block's first record.
    pub record_offset: u64,
    pub record_count: u32,
    /// Sum of encoded record sizes, the quantity bounded by `max_block_bytes`.
    pub payload_bytes: u64,
    /// A single record larger than the block budget.
    pub oversize: bool,
}

/// Build-time figures, stored in the table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SSTableStats {
    pub index_kind: IndexKind,
    pub config: crate::model::BuildConfig,
    pub record_count: u64,
    pub block_count: u64,
    /// Wall time of the whole write, including the final sync.
    pub build_time_ns: u64,
    pub model_train_time_ns: u64,
    pub serialize_time_ns: u64,
    /// Exact length of the serialized model or baseline index region.
    pub index_bytes: u64,
    /// Length of the block map region, which both kinds carry.
    pub block_map_bytes: u64,
    pub data_bytes: u64,
    pub node_count: u64,
    pub segment_count: u64,
}

/// Work done by one table probe.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ProbeStats {
    pub blocks_read: u64,
    pub bytes_read: u64,
    pub key_comparisons: u64,
    pub bytes_compared: u64,
}

impl ProbeStats {
    pub fn add(&mut self, other: &ProbeStats) {
        self.blocks_read += other.blocks_read;
        self.bytes_read += other.bytes_read;
        self.key_comparisons += other.key_comparisons;
        self.bytes_compared += other.bytes_compared;
    }
}
