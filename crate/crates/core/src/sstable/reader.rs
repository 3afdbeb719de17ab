use std::fs::File;
use std::ops::Deref;
use std::path::{Path, PathBuf};

use serde_json::json;
use xxhash_rust::xxh64::xxh64;

use super::block::{last_mile_search, Block};
use super::{BlockMeta, Footer, IndexKind, ProbeStats, SSTableStats, FOOTER_BYTES, SST_MAGIC, SST_VERSION};
use crate::error::{Result, StoreError};
use crate::index::{deserialize, NodeModel};
use crate::record::{compare_counted, Record};

/// Result of probing one table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Lookup {
    Value(Vec<u8>),
    /// The table holds a deletion marker for the key.
    Tombstone,
    Absent,
}

/// An open, validated table. Reads use positional I/O, so one handle can
/// serve any number of threads.
#[derive(Debug)]
pub struct SSTableHandle {
    path: PathBuf,
    file: File,
    footer: Footer,
    stats: SSTableStats,
    blocks: Vec<BlockMeta>,
    record_count: u64,
    min_key: Vec<u8>,
    max_key: Vec<u8>,
    model: Option<NodeModel>,
    /// Last key of each block, for FixedBinary tables.
    last_keys: Option<Vec<Vec<u8>>>,
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| StoreError::corrupt(format!("{} truncated", self.what)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn key(&mut self) -> Result<Vec<u8>> {
        let n = self.u32()? as usize;
        Ok(self.take(n)?.to_vec())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(StoreError::corrupt(format!("{} has trailing bytes", self.what)));
        }
        Ok(())
    }
}

/// Splits off and checks the trailing xxh64 of a region.
fn checked_region<'a>(bytes: &'a [u8], what: &'static str) -> Result<Cursor<'a>> {
    if bytes.len() < 8 {
        return Err(StoreError::corrupt(format!("{what} truncated")));
    }
    let (body, sum) = bytes.split_at(bytes.len() - 8);
    if xxh64(body, 0) != u64::from_le_bytes(sum.try_into().unwrap()) {
        return Err(StoreError::corrupt(format!("{what} checksum mismatch")));
    }
    Ok(Cursor { bytes: body, pos: 0, what })
}

#[cfg(unix)]
fn read_at(file: &File, buf: &mut [u8], offset: u64) -> std::io::Result<()> {
    use std::os::unix::fs::FileExt;
    file.read_exact_at(buf, offset)
}

#[cfg(windows)]
fn read_at(file: &File, mut buf: &mut [u8], mut offset: u64) -> std::io::Result<()> {
    use std::os::windows::fs::FileExt;
    while !buf.is_empty() {
        let n = file.seek_read(buf, offset)?;
        if n == 0 {
            return Err(std::io::ErrorKind::UnexpectedEof.into());
        }
        buf = &mut buf[n..];
        offset += n as u64;
    }
    Ok(())
}

impl SSTableHandle {
    pub fn open(path: &Path) -> Result<Self> {
        let file = File::open(path)?;
        let file_len = file.metadata()?.len();
        if file_len < FOOTER_BYTES as u64 {
            return Err(StoreError::corrupt("file shorter than the footer"));
        }
        let mut raw = [0u8; FOOTER_BYTES];
        read_at(&file, &mut raw, file_len - FOOTER_BYTES as u64)?;
        let mut c = Cursor {
            bytes: &raw,
            pos: 0,
            what: "footer",
        };
        let footer = Footer {
            block_map_offset: c.u64()?,
            index_offset: c.u64()?,
            model_offset: c.u64()?,
            stats_offset: c.u64()?,
            footer_offset: c.u64()?,
        };
        if c.take(4)? != SST_MAGIC {
            return Err(StoreError::corrupt("bad table magic"));
        }
        let version = c.u8()?;
        if version != SST_VERSION {
            return Err(StoreError::corrupt(format!("unsupported table version {version}")));
        }
        let ordered = footer.block_map_offset <= footer.index_offset
            && footer.index_offset <= footer.model_offset
            && footer.model_offset <= footer.stats_offset
            && footer.stats_offset <= footer.footer_offset
            && footer.footer_offset + FOOTER_BYTES as u64 == file_len;
        if !ordered {
            return Err(StoreError::corrupt("footer offsets out of bounds"));
        }

        let meta_start = footer.block_map_offset;
        let mut meta = vec![0u8; (footer.footer_offset - meta_start) as usize];
        read_at(&file, &mut meta, meta_start)?;
        let region = |from: u64, to: u64| &meta[(from - meta_start) as usize..(to - meta_start) as usize];

        let stats: SSTableStats = serde_json::from_slice(region(footer.stats_offset, footer.footer_offset))
            .map_err(|e| StoreError::corrupt(format!("stats region: {e}")))?;

        let mut c = checked_region(region(footer.block_map_offset, footer.index_offset), "block map")?;
        let record_count = c.u64()?;
        let min_key = c.key()?;
        let max_key = c.key()?;
        let block_count = c.u32()? as usize;
        let mut blocks = Vec::with_capacity(block_count.min(meta.len() / 33));
        let (mut next_file, mut next_record) = (0u64, 0u64);
        for _ in 0..block_count {
            let b = BlockMeta {
                file_offset: c.u64()?,
                byte_len: c.u32()?,
                record_offset: c.u64()?,
                record_count: c.u32()?,
                payload_bytes: c.u64()?,
                oversize: c.u8()? != 0,
            };
            if b.file_offset != next_file || b.record_offset != next_record || b.record_count == 0 {
                return Err(StoreError::corrupt("block map is not contiguous"));
            }
            next_file += b.byte_len as u64;
            next_record += b.record_count as u64;
            blocks.push(b);
        }
        c.finish()?;
        if blocks.is_empty() || next_file != footer.block_map_offset || next_record != record_count || min_key > max_key {
            return Err(StoreError::corrupt("block map disagrees with the data region"));
        }

        let index_region = region(footer.index_offset, footer.model_offset);
        let model_region = region(footer.model_offset, footer.stats_offset);
        let (model, last_keys) = match stats.index_kind {
            IndexKind::Learned => {
                if !index_region.is_empty() {
                    return Err(StoreError::corrupt("learned table carries a baseline index"));
                }
                let model = deserialize(model_region)?;
                let offsets: Vec<u64> = blocks.iter().map(|b| b.record_offset).collect();
                if model.block_offsets() != offsets {
                    return Err(StoreError::corrupt("model blocks differ from the block map"));
                }
                model.check_layout(&offsets)?;
                (Some(model), None)
            }
            IndexKind::FixedBinary => {
                if !model_region.is_empty() {
                    return Err(StoreError::corrupt("baseline table carries a model"));
                }
                let mut c = checked_region(index_region, "baseline index")?;
                let n = c.u32()? as usize;
                if n != blocks.len() {
                    return Err(StoreError::corrupt("baseline index size differs from block count"));
                }
                let mut keys = Vec::with_capacity(n);
                for b in &blocks {
                    keys.push(c.key()?);
                    if c.u64()? != b.file_offset {
                        return Err(StoreError::corrupt("baseline index offset mismatch"));
                    }
                }
                c.finish()?;
                if keys.windows(2).any(|w| w[0] >= w[1]) || keys.last() != Some(&max_key) {
                    return Err(StoreError::corrupt("baseline index keys out of order"));
                }
                (None, Some(keys))
            }
        };

        Ok(SSTableHandle {
            path: path.to_path_buf(),
            file,
            footer,
            stats,
            blocks,
            record_count,
            min_key,
            max_key,
            model,
            last_keys,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn kind(&self) -> IndexKind {
        self.stats.index_kind
    }

    pub fn footer(&self) -> &Footer {
        &self.footer
    }

    pub fn stats(&self) -> &SSTableStats {
        &self.stats
    }

    pub fn blocks(&self) -> &[BlockMeta] {
        &self.blocks
    }

    pub fn block_count(&self) -> usize {
        self.blocks.len()
    }

    pub fn record_count(&self) -> u64 {
        self.record_count
    }

    pub fn min_key(&self) -> &[u8] {
        &self.min_key
    }

    pub fn max_key(&self) -> &[u8] {
        &self.max_key
    }

    pub fn key_range(&self) -> (&[u8], &[u8]) {
        (&self.min_key, &self.max_key)
    }

    pub fn model(&self) -> Option<&NodeModel> {
        self.model.as_ref()
    }

    pub fn file_size(&self) -> u64 {
        self.footer.footer_offset + FOOTER_BYTES as u64
    }

    pub fn covers(&self, key: &[u8]) -> bool {
        key >= self.min_key.as_slice() && key <= self.max_key.as_slice()
    }

    /// Reads and verifies one data block.
    pub fn read_block(&self, id: usize, stats: &mut ProbeStats) -> Result<Block> {
        let meta = self
            .blocks
            .get(id)
            .ok_or_else(|| StoreError::corrupt(format!("block {id} out of range")))?;
        let mut buf = vec![0u8; meta.byte_len as usize];
        read_at(&self.file, &mut buf, meta.file_offset)?;
        stats.blocks_read += 1;
        stats.bytes_read += buf.len() as u64;
        let block = Block::decode(buf, meta.record_offset)?;
        if block.len() != meta.record_count as usize {
            return Err(StoreError::corrupt("block record count differs from the block map"));
        }
        Ok(block)
    }

    /// Looks `key` up, reading at most one data block. Keys outside the
    /// table's range are answered without any read.
    pub fn probe(&self, key: &[u8], stats: &mut ProbeStats) -> Result<Lookup> {
        if !self.covers(key) {
            return Ok(Lookup::Absent);
        }
        let (block, pos) = match (&self.model, &self.last_keys) {
            (Some(model), _) => {
                let hint = model.lookup_hint(key);
                let block = self.read_block(hint.block_id as usize, stats)?;
                let pos = last_mile_search(&block, &hint, key, stats);
                (block, pos)
            }
            (None, Some(last_keys)) => {
                let id = search_last_keys(last_keys, key, stats);
                if id == last_keys.len() {
                    return Ok(Lookup::Absent);
                }
                let block = self.read_block(id, stats)?;
                let pos = block.binary_search(key, stats);
                (block, pos)
            }
            (None, None) => unreachable!("a table always has one index"),
        };
        Ok(match pos {
            None => Lookup::Absent,
            Some(i) => {
                let r = block.record(i);
                if r.tombstone {
                    Lookup::Tombstone
                } else {
                    Lookup::Value(r.value.to_vec())
                }
            }
        })
    }

    pub fn get(&self, key: &[u8]) -> Result<Vec<u8>> {
        match self.probe(key, &mut ProbeStats::default())? {
            Lookup::Value(v) => Ok(v),
            _ => Err(StoreError::KeyNotFound),
        }
    }

    /// Iterates every record, tombstones included, in key order.
    pub fn iter(&self) -> TableIter<&Self> {
        TableIter::all(self)
    }

    /// Iterates records with `from <= key <= to`, tombstones included.
    pub fn range(&self, from: &[u8], to: &[u8]) -> Result<TableIter<&Self>> {
        TableIter::range(self, from, to)
    }

    /// Records with `from <= key <= to`, tombstones included.
    pub fn range_scan(&self, from: &[u8], to: &[u8]) -> Result<Vec<Record>> {
        self.range(from, to)?.collect()
    }
}

/// First block whose last key is `>= key`; `len` when there is none.
fn search_last_keys(keys: &[Vec<u8>], key: &[u8], stats: &mut ProbeStats) -> usize {
    let (mut lo, mut hi) = (0, keys.len());
    while lo < hi {
        let mid = (lo + hi) / 2;
        let (ord, bytes) = compare_counted(&keys[mid], key);
        stats.key_comparisons += 1;
        stats.bytes_compared += bytes as u64;
        if ord.is_lt() {
            lo = mid + 1;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Sequential reader over a table, one block in memory at a time.
///
/// Generic over how the table is held so both borrowed handles and `Arc`s work.
pub struct TableIter<T: Deref<Target = SSTableHandle>> {
    table: T,
    next_block: usize,
    block: Option<Block>,
    pos: usize,
    end: Option<Vec<u8>>,
    done: bool,
}

impl<T: Deref<Target = SSTableHandle>> TableIter<T> {
    fn new(table: T, next_block: usize, pos: usize, end: Option<Vec<u8>>) -> Self {
        TableIter {
            table,
            next_block,
            block: None,
            pos,
            end,
            done: false,
        }
    }

    pub fn all(table: T) -> Self {
        Self::new(table, 0, 0, None)
    }

    /// Positions on the first record `>= from`, found through the index, and
    /// stops after `to`.
    pub fn range(table: T, from: &[u8], to: &[u8]) -> Result<Self> {
        let t: &SSTableHandle = &table;
        if from > to || from > t.max_key.as_slice() || to < t.min_key.as_slice() {
            let n = t.blocks.len();
            return Ok(Self::new(table, n, 0, None));
        }
        let end = Some(to.to_vec());
        if from <= t.min_key.as_slice() {
            return Ok(Self::new(table, 0, 0, end));
        }
        let mut stats = ProbeStats::default();
        let mut id = match (&t.model, &t.last_keys) {
            (Some(model), _) => model.lookup_hint(from).block_id as usize,
            (None, Some(keys)) => search_last_keys(keys, from, &mut stats).min(t.blocks.len() - 1),
            (None, None) => unreachable!("a table always has one index"),
        };
        // The hint names the block `from` would live in if present; for an
        // absent key walk to the block holding its successor.
        let mut block = t.read_block(id, &mut stats)?;
        while id > 0 && from < block.key(0) {
            id -= 1;
            block = t.read_block(id, &mut stats)?;
        }
        while id + 1 < t.blocks.len() && from > block.key(block.len() - 1) {
            id += 1;
            block = t.read_block(id, &mut stats)?;
        }
        let pos = block.lower_bound(from);
        let mut it = Self::new(table, id + 1, pos, end);
        it.block = Some(block);
        Ok(it)
    }
}

impl<T: Deref<Target = SSTableHandle>> Iterator for TableIter<T> {
    type Item = Result<Record>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        loop {
            if let Some(block) = &self.block {
                if self.pos < block.len() {
                    let r = block.record(self.pos);
                    if self.end.as_deref().is_some_and(|end| r.key > end) {
                        self.done = true;
                        return None;
                    }
                    self.pos += 1;
                    return Some(Ok(r.to_record()));
                }
            }
            if self.next_block >= self.table.blocks.len() {
                self.done = true;
                return None;
            }
            let first_load = self.block.is_none();
            match self.table.read_block(self.next_block, &mut ProbeStats::default()) {
                Ok(b) => {
                    self.block = Some(b);
                    self.next_block += 1;
                    if !first_load {
                        self.pos = 0;
                    }
                }
                Err(e) => {
                    self.done = true;
                    return Some(Err(e));
                }
            }
        }
    }
}

/// JSON description of a table file: footer, stats, block map and model tree.
pub fn inspect(path: &Path) -> Result<serde_json::Value> {
    let t = SSTableHandle::open(path)?;
    let max_block = t.stats.config.max_block_bytes;
    let blocks: Vec<_> = t
        .blocks
        .iter()
        .enumerate()
        .map(|(i, b)| {
            json!({
                "id": i,
                "file_offset": b.file_offset,
                "byte_len": b.byte_len,
                "record_offset": b.record_offset,
                "record_count": b.record_count,
                "payload_bytes": b.payload_bytes,
                "oversize": b.oversize,
                "within_budget": b.payload_bytes <= max_block,
            })
        })
        .collect();
    Ok(json!({
        "path": path.display().to_string(),
        "file_size": t.file_size(),
        "footer": t.footer,
        "stats": t.stats,
        "record_count": t.record_count,
        "key_range": { "min": hex::encode(&t.min_key), "max": hex::encode(&t.max_key) },
        "blocks": blocks,
        "model": t.model.as_ref().map(|m| m.summary()),
        "baseline_index_entries": t.last_keys.as_ref().map(|k| k.len()),
    }))
}
