//! Byte format of a trie, written into the SSTable model section.
//!
//! ```text
//! magic "DBLX" | version u16 | node
//! node  := flags u8 | level u8 | depth u16 | prefix_len u16 | prefix
//!        | radix_bits u8 | radix_len u32 | radix_len × u32
//!        | seg_count u32 | seg_count × (x0 u64, a f64, b f64, max_error u32, offset u64, block_id u32)
//!        | child_count u32 | child_count × (slice u64, node)
//! ```
//!
//! Nodes are written depth-first, parent before children. All integers are
//! little-endian.

use super::radix::RadixTable;
use super::NodeModel;
use crate::error::{Result, StoreError};
use crate::model::{IndexMethod, SegmentModel};

pub const MODEL_MAGIC: &[u8; 4] = b"DBLX";
pub const MODEL_VERSION: u16 = 1;

const FLAG_CHILDREN: u8 = 1;
const FLAG_PRA: u8 = 1 << 1;
const FLAG_LENGTH_KEYED: u8 = 1 << 2;
const SEGMENT_BYTES: usize = 8 + 8 + 8 + 4 + 8 + 4;
const MAX_RADIX_BITS: u8 = 24;
/// Deeper than any trie over keys of at most 4096 bytes.
const MAX_NESTING: u32 = 1024;

/// Encoded trie bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SerializedModel(pub Vec<u8>);

impl SerializedModel {
    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

pub fn serialize(root: &NodeModel) -> SerializedModel {
    let mut out = Vec::with_capacity(64 + root.segment_count() * SEGMENT_BYTES);
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    write_node(root, &mut out);
    SerializedModel(out)
}

fn write_node(node: &NodeModel, out: &mut Vec<u8>) {
    let mut flags = 0u8;
    if !node.children.is_empty() {
        flags |= FLAG_CHILDREN;
    }
    if node.method == IndexMethod::Pra {
        flags |= FLAG_PRA;
    }
    if node.length_keyed {
        flags |= FLAG_LENGTH_KEYED;
    }
    out.push(flags);
    out.push(node.level.min(u8::MAX as u32) as u8);
    out.extend_from_slice(&(node.depth as u16).to_le_bytes());
    out.extend_from_slice(&(node.prefix.len() as u16).to_le_bytes());
    out.extend_from_slice(&node.prefix);
    out.push(node.radix.bits());
    let entries = node.radix.entries();
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for e in entries {
        out.extend_from_slice(&e.to_le_bytes());
    }
    out.extend_from_slice(&(node.segments.len() as u32).to_le_bytes());
    for s in &node.segments {
        out.extend_from_slice(&s.x0.to_le_bytes());
        out.extend_from_slice(&s.a.to_le_bytes());
        out.extend_from_slice(&s.b.to_le_bytes());
        out.extend_from_slice(&s.max_error.to_le_bytes());
        out.extend_from_slice(&s.offset.to_le_bytes());
        out.extend_from_slice(&s.block_id.to_le_bytes());
    }
    out.extend_from_slice(&(node.children.len() as u32).to_le_bytes());
    for (slice, child) in &node.children {
        out.extend_from_slice(&slice.to_le_bytes());
        write_node(child, out);
    }
}

/// Parses and validates a trie. Any truncation, trailing bytes or
/// inconsistent field yields `ModelDeserializeFailure`.
pub fn deserialize(bytes: &[u8]) -> Result<NodeModel> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MODEL_MAGIC {
        return Err(StoreError::model("bad magic"));
    }
    let version = r.u16()?;
    if version != MODEL_VERSION {
        return Err(StoreError::model(format!("unsupported version {version}")));
    }
    let root = read_node(&mut r, 0, None)?;
    if r.pos != bytes.len() {
        return Err(StoreError::model(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(root)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| StoreError::model(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        let v = f64::from_le_bytes(self.take(8)?.try_into().unwrap());
        if !v.is_finite() {
            return Err(StoreError::model("non-finite coefficient"));
        }
        Ok(v)
    }

    /// Reads a count of items at least `item_bytes` long each, refusing
    /// counts the remaining input cannot hold.
    fn count(&mut self, item_bytes: usize) -> Result<usize> {
        let n = self.u32()? as usize;
        if n.saturating_mul(item_bytes) > self.remaining() {
            return Err(StoreError::model(format!("count {n} exceeds remaining input")));
        }
        Ok(n)
    }
}

fn read_node(r: &mut Reader, level: u32, parent: Option<(bool, usize, IndexMethod)>) -> Result<NodeModel> {
    if level > MAX_NESTING {
        return Err(StoreError::model("trie nested too deeply"));
    }
    let flags = r.u8()?;
    if flags & !(FLAG_CHILDREN | FLAG_PRA | FLAG_LENGTH_KEYED) != 0 {
        return Err(StoreError::model(format!("unknown flags {flags:#x}")));
    }
    let method = if flags & FLAG_PRA != 0 {
        IndexMethod::Pra
    } else {
        IndexMethod::Pla
    };
    let length_keyed = flags & FLAG_LENGTH_KEYED != 0;
    let stored_level = r.u8()?;
    if stored_level as u32 != level.min(u8::MAX as u32) {
        return Err(StoreError::model(format!("level {stored_level} where {level} expected")));
    }
    let depth = r.u16()? as usize;
    let prefix_len = r.u16()? as usize;
    let prefix = r.take(prefix_len)?.to_vec();
    match parent {
        None if length_keyed || prefix_len != depth => {
            return Err(StoreError::model("malformed root node"));
        }
        Some((_, parent_depth, parent_method)) => {
            if parent_method != method {
                return Err(StoreError::model("child method differs from parent"));
            }
            if depth < parent_depth + 8 || depth - (parent_depth + 8) != prefix_len {
                return Err(StoreError::model(format!("child depth {depth} inconsistent with prefix")));
            }
            if length_keyed && prefix_len != 0 {
                return Err(StoreError::model("length-keyed node with a prefix"));
            }
        }
        None => {}
    }

    let radix_bits = r.u8()?;
    if radix_bits > MAX_RADIX_BITS {
        return Err(StoreError::model(format!("radix bits {radix_bits} out of range")));
    }
    let radix_len = r.count(4)?;
    if radix_len != (1usize << radix_bits) + 1 {
        return Err(StoreError::model("radix table length does not match its bits"));
    }
    let mut entries = Vec::with_capacity(radix_len);
    for _ in 0..radix_len {
        entries.push(r.u32()?);
    }

    let seg_count = r.count(SEGMENT_BYTES)?;
    if seg_count == 0 {
        return Err(StoreError::model("node without segments"));
    }
    let mut segments = Vec::with_capacity(seg_count);
    for _ in 0..seg_count {
        segments.push(SegmentModel {
            x0: r.u64()?,
            a: r.f64()?,
            b: r.f64()?,
            max_error: r.u32()?,
            offset: r.u64()?,
            block_id: r.u32()?,
        });
    }
    if segments.windows(2).any(|w| w[0].x0 > w[1].x0 || w[0].offset > w[1].offset) {
        return Err(StoreError::model("segments out of order"));
    }
    let radix = RadixTable::with_bits(&segments, radix_bits);
    if radix.entries() != entries.as_slice() {
        return Err(StoreError::model("radix table inconsistent with segments"));
    }

    let child_count = r.count(8 + 1)?;
    if (child_count > 0) != (flags & FLAG_CHILDREN != 0) || (length_keyed && child_count > 0) {
        return Err(StoreError::model("child flag does not match child count"));
    }
    let mut children: Vec<(u64, NodeModel)> = Vec::with_capacity(child_count);
    for _ in 0..child_count {
        let slice = r.u64()?;
        if children.last().is_some_and(|(prev, _)| *prev >= slice) {
            return Err(StoreError::model("child slices not strictly increasing"));
        }
        let child = read_node(r, level + 1, Some((length_keyed, depth, method)))?;
        children.push((slice, child));
    }
    Ok(NodeModel {
        level,
        depth,
        prefix,
        method,
        length_keyed,
        radix,
        segments,
        children,
    })
}
