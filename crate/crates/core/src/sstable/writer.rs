use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use xxhash_rust::xxh64::xxh64;

use super::block::encode_block;
use super::{BlockMeta, Footer, IndexKind, SSTableHandle, SSTableStats};
use crate::error::{Result, StoreError};
use crate::index::{build_trie_with_points, root_depth, serialize};
use crate::model::{partition_ranges, BuildConfig, IndexedPoint};
use crate::record::{slice_to_integer, Record};

/// Writes `records` (sorted, distinct keys) as a new table at `path` and
/// opens it.
///
/// Learned tables take their block boundaries from the trained model, so
/// each root segment owns exactly one block. FixedBinary tables cut blocks
/// greedily at the byte budget. Record order is identical either way.
pub fn write_sstable(path: &Path, records: &[Record], config: &BuildConfig, kind: IndexKind) -> Result<SSTableHandle> {
    let started = Instant::now();
    config.validate()?;
    if records.is_empty() {
        return Err(StoreError::config("cannot write an empty table"));
    }
    // One scan validates the records and, for a learned table, reads the
    // root slices while each key is at hand.
    let learned = kind == IndexKind::Learned;
    let depth = root_depth(&records[0].key, &records[records.len() - 1].key);
    let mut points = Vec::with_capacity(if learned { records.len() } else { 0 });
    for (i, r) in records.iter().enumerate() {
        r.validate()?;
        if i > 0 && records[i - 1].key >= r.key {
            return Err(StoreError::config("records must be sorted by key without duplicates"));
        }
        if learned {
            points.push(IndexedPoint::new(
                slice_to_integer(&r.key, depth),
                i as u64,
                r.encoded_size() as u64,
            ));
        }
    }

    let mut train_ns = 0;
    let mut serialize_ns = 0;
    let mut node_count = 0;
    let mut segment_count = 0;
    let mut model_bytes = Vec::new();
    let block_starts: Vec<usize> = match kind {
        IndexKind::Learned => {
            let t = Instant::now();
            let root = build_trie_with_points(records, depth, &points, config)?;
            train_ns = t.elapsed().as_nanos() as u64;
            let t = Instant::now();
            model_bytes = serialize(&root).0;
            serialize_ns = t.elapsed().as_nanos() as u64;
            node_count = root.node_count() as u64;
            segment_count = root.segment_count() as u64;
            root.block_offsets().into_iter().map(|o| o as usize).collect()
        }
        IndexKind::FixedBinary => {
            let sizes: Vec<u64> = records.iter().map(|r| r.encoded_size() as u64).collect();
            partition_ranges(&sizes, config.max_block_bytes)
                .into_iter()
                .map(|r| r.start)
                .collect()
        }
    };

    let file = File::create(path)?;
    let mut out = BufWriter::with_capacity(1 << 20, file);
    let mut pos = 0u64;
    let mut blocks = Vec::with_capacity(block_starts.len());
    let mut buf = Vec::new();
    for (i, &start) in block_starts.iter().enumerate() {
        let end = block_starts.get(i + 1).copied().unwrap_or(records.len());
        let chunk = &records[start..end];
        buf.clear();
        encode_block(chunk, &mut buf);
        let payload: u64 = chunk.iter().map(|r| r.encoded_size() as u64).sum();
        blocks.push(BlockMeta {
            file_offset: pos,
            byte_len: buf.len() as u32,
            record_offset: start as u64,
            record_count: chunk.len() as u32,
            payload_bytes: payload,
            oversize: chunk.len() == 1 && payload > config.max_block_bytes,
        });
        out.write_all(&buf)?;
        pos += buf.len() as u64;
    }
    let data_bytes = pos;

    let map = encode_block_map(&blocks, records);
    let block_map_offset = pos;
    out.write_all(&map)?;
    pos += map.len() as u64;

    let index_offset = pos;
    if kind == IndexKind::FixedBinary {
        let index = encode_fixed_index(&blocks, records);
        out.write_all(&index)?;
        pos += index.len() as u64;
    }
    let model_offset = pos;
    out.write_all(&model_bytes)?;
    pos += model_bytes.len() as u64;

    let index_bytes = pos - index_offset;
    let mut stats = SSTableStats {
        index_kind: kind,
        config: *config,
        record_count: records.len() as u64,
        block_count: blocks.len() as u64,
        build_time_ns: 0,
        model_train_time_ns: train_ns,
        serialize_time_ns: serialize_ns,
        index_bytes,
        block_map_bytes: map.len() as u64,
        data_bytes,
        node_count,
        segment_count,
    };
    // The stats region is written last, after the sync, so build time
    // covers everything but its own few hundred bytes.
    let mut file = out.into_inner().map_err(|e| e.into_error())?;
    file.sync_data()?;
    stats.build_time_ns = started.elapsed().as_nanos() as u64;
    let stats_offset = pos;
    let mut tail = serde_json::to_vec(&stats)?;
    pos += tail.len() as u64;
    Footer {
        block_map_offset,
        index_offset,
        model_offset,
        stats_offset,
        footer_offset: pos,
    }
    .encode(&mut tail);
    file.write_all(&tail)?;
    file.sync_all()?;
    drop(file);
    SSTableHandle::open(path)
}

fn push_key(out: &mut Vec<u8>, key: &[u8]) {
    out.extend_from_slice(&(key.len() as u32).to_le_bytes());
    out.extend_from_slice(key);
}

/// `record_count u64 | min_key | max_key | block_count u32 | blocks | xxh64`,
/// keys as `u32 len | bytes`, each block as
/// `file_offset u64 | byte_len u32 | record_offset u64 | record_count u32 | payload u64 | flags u8`.
fn encode_block_map(blocks: &[BlockMeta], records: &[Record]) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + blocks.len() * 33);
    out.extend_from_slice(&(records.len() as u64).to_le_bytes());
    push_key(&mut out, &records[0].key);
    push_key(&mut out, &records[records.len() - 1].key);
    out.extend_from_slice(&(blocks.len() as u32).to_le_bytes());
    for b in blocks {
        out.extend_from_slice(&b.file_offset.to_le_bytes());
        out.extend_from_slice(&b.byte_len.to_le_bytes());
        out.extend_from_slice(&b.record_offset.to_le_bytes());
        out.extend_from_slice(&b.record_count.to_le_bytes());
        out.extend_from_slice(&b.payload_bytes.to_le_bytes());
        out.push(b.oversize as u8);
    }
    let sum = xxh64(&out, 0);
    out.extend_from_slice(&sum.to_le_bytes());
    out
}

/// `count u32 | count × (u32 key_len | last_key | u64 block_offset) | xxh64`.
fn encode_fixed_index(blocks: &[BlockMeta], records: &[Record]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&(blocks.len() as u32).to_le_bytes());
    for b in blocks {
        let last = (b.record_offset + b.record_count as u64 - 1) as usize;
        push_key(&mut out, &records[last].key);
        out.extend_from_slice(&b.file_offset.to_le_bytes());
    }
    let sum = xxh64(&out, 0);
    out.extend_from_slice(&sum.to_le_bytes());
    out
}
