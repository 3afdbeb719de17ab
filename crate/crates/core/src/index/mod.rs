//! Variable-length string key index.
//!
//! A trie of [`NodeModel`]s. Each node strips the longest prefix shared by
//! its keys, reads the next 8 bytes of every key as a big-endian integer,
//! and models those integers with block-aligned segments. Keys whose slices
//! collide are routed to a child node through the redirector map; the child
//! repeats the process 8 bytes further into the key.
//!
//! Blocks are physical and shared by the whole trie: the root's segments
//! define them, and every child segment names one of those blocks.

mod codec;
mod radix;

use std::ops::Range;

use serde::Serialize;

use crate::error::{Result, StoreError};
use crate::model::{build_pla, build_pra, regression_segment, BuildConfig, IndexMethod, IndexedPoint, SegmentModel};
use crate::record::{common_prefix_len, slice_to_integer, Record, SLICE_BYTES};

pub use codec::{deserialize, serialize, SerializedModel, MODEL_MAGIC, MODEL_VERSION};
pub use radix::{radix_budget, RadixTable};

/// What the index tells the last-mile search about a key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct LookupHint {
    pub block_id: u32,
    /// Predicted global position of the key in the table.
    pub predicted_index: u64,
    /// Records stored before `block_id`.
    pub offset: u64,
    pub max_error: u32,
    /// Trie level of the node that produced the prediction.
    pub level: u32,
    /// Bytes shared by every key under that node.
    pub prefix_len: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeModel {
    pub level: u32,
    /// Byte offset of this node's slice window within the full key.
    pub depth: usize,
    /// Prefix stripped at this node (bytes just before `depth`).
    pub prefix: Vec<u8>,
    pub method: IndexMethod,
    /// The node's keys are equal up to zero padding, so their length is the slice.
    pub length_keyed: bool,
    pub radix: RadixTable,
    pub segments: Vec<SegmentModel>,
    /// Redirector map, sorted by slice value.
    pub children: Vec<(u64, NodeModel)>,
}

impl NodeModel {
    #[inline]
    fn slice_of(&self, key: &[u8]) -> u64 {
        if self.length_keyed {
            key.len() as u64
        } else {
            slice_to_integer(key, self.depth)
        }
    }

    fn child(&self, x: u64) -> Option<&NodeModel> {
        if self.children.is_empty() {
            return None;
        }
        self.children
            .binary_search_by_key(&x, |(s, _)| *s)
            .ok()
            .map(|i| &self.children[i].1)
    }

    /// Walks the redirector maps to the node responsible for `key` and
    /// evaluates its segment model there.
    pub fn lookup_hint(&self, key: &[u8]) -> LookupHint {
        let mut node = self;
        loop {
            let x = node.slice_of(key);
            if let Some(child) = node.child(x) {
                node = child;
                continue;
            }
            let seg = &node.segments[node.radix.locate(&node.segments, x)];
            return LookupHint {
                block_id: seg.block_id,
                predicted_index: seg.predict_index(x),
                offset: seg.offset,
                max_error: seg.max_error,
                level: node.level,
                prefix_len: node.depth,
            };
        }
    }

    pub fn node_count(&self) -> usize {
        1 + self.children.iter().map(|(_, c)| c.node_count()).sum::<usize>()
    }

    pub fn segment_count(&self) -> usize {
        self.segments.len() + self.children.iter().map(|(_, c)| c.segment_count()).sum::<usize>()
    }

    pub fn max_level(&self) -> u32 {
        self.children.iter().map(|(_, c)| c.max_level()).max().unwrap_or(self.level)
    }

    /// Block boundaries as record offsets, taken from the root segments.
    pub fn block_offsets(&self) -> Vec<u64> {
        self.segments.iter().map(|s| s.offset).collect()
    }

    /// Checks every segment against the physical layout it will be used with.
    pub fn check_layout(&self, block_offsets: &[u64]) -> Result<()> {
        for s in &self.segments {
            match block_offsets.get(s.block_id as usize) {
                Some(&off) if off == s.offset => {}
                _ => {
                    return Err(StoreError::corrupt(format!(
                        "segment names block {} at offset {} outside the block map",
                        s.block_id, s.offset
                    )))
                }
            }
        }
        self.children.iter().try_for_each(|(_, c)| c.check_layout(block_offsets))
    }

    pub fn summary(&self) -> NodeSummary {
        NodeSummary {
            level: self.level,
            depth: self.depth,
            prefix: hex::encode(&self.prefix),
            length_keyed: self.length_keyed,
            radix_bits: self.radix.bits(),
            segments: self.segments.clone(),
            children: self
                .children
                .iter()
                .map(|(s, c)| ChildSummary {
                    slice: *s,
                    node: c.summary(),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct NodeSummary {
    pub level: u32,
    pub depth: usize,
    pub prefix: String,
    pub length_keyed: bool,
    pub radix_bits: u8,
    pub segments: Vec<SegmentModel>,
    pub children: Vec<ChildSummary>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ChildSummary {
    pub slice: u64,
    pub node: NodeSummary,
}

/// Builds the trie over sorted, distinct records.
pub fn build_trie(records: &[Record], config: &BuildConfig) -> Result<NodeModel> {
    build(records, config)
}

/// Same as [`build_trie`] over parallel key and encoded-size arrays.
pub fn build_trie_from_keys(keys: &[&[u8]], sizes: &[u64], config: &BuildConfig) -> Result<NodeModel> {
    assert_eq!(keys.len(), sizes.len());
    build(&KeySizes { keys, sizes }, config)
}

/// Random access to the sorted keys being indexed and their encoded sizes.
trait KeySource {
    fn len(&self) -> usize;
    fn key(&self, i: usize) -> &[u8];
    fn size(&self, i: usize) -> u64;
}

impl KeySource for [Record] {
    fn len(&self) -> usize {
        <[Record]>::len(self)
    }
    #[inline]
    fn key(&self, i: usize) -> &[u8] {
        &self[i].key
    }
    #[inline]
    fn size(&self, i: usize) -> u64 {
        self[i].encoded_size() as u64
    }
}

struct KeySizes<'a> {
    keys: &'a [&'a [u8]],
    sizes: &'a [u64],
}

impl KeySource for KeySizes<'_> {
    fn len(&self) -> usize {
        self.keys.len()
    }
    #[inline]
    fn key(&self, i: usize) -> &[u8] {
        self.keys[i]
    }
    #[inline]
    fn size(&self, i: usize) -> u64 {
        self.sizes[i]
    }
}

fn build<S: KeySource + ?Sized>(src: &S, config: &BuildConfig) -> Result<NodeModel> {
    config.validate()?;
    let n = src.len();
    if n == 0 {
        return Err(StoreError::config("cannot index an empty record set"));
    }
    debug_assert!((1..n).all(|i| src.key(i - 1) < src.key(i)), "keys must be sorted and distinct");

    let depth = root_depth(src.key(0), src.key(n - 1));
    let points: Vec<IndexedPoint> = (0..n)
        .map(|i| IndexedPoint::new(slice_to_integer(src.key(i), depth), i as u64, src.size(i)))
        .collect();
    build_from_points(src, depth, &points, config)
}

/// Slice depth of the root node: the prefix shared by the first and last key.
pub(crate) fn root_depth(first: &[u8], last: &[u8]) -> usize {
    common_prefix_len(first, last)
}

/// [`build_trie`] for callers that already scanned the records and hold the
/// root points, `points[i] = (slice_to_integer(key_i, depth), i, encoded size)`.
pub(crate) fn build_trie_with_points(records: &[Record], depth: usize, points: &[IndexedPoint], config: &BuildConfig) -> Result<NodeModel> {
    config.validate()?;
    if records.is_empty() {
        return Err(StoreError::config("cannot index an empty record set"));
    }
    debug_assert_eq!(depth, root_depth(&records[0].key, &records[records.len() - 1].key));
    debug_assert_eq!(records.len(), points.len());
    build_from_points(records, depth, points, config)
}

fn build_from_points<S: KeySource + ?Sized>(src: &S, depth: usize, points: &[IndexedPoint], config: &BuildConfig) -> Result<NodeModel> {
    let n = points.len();
    let segments = match config.method {
        IndexMethod::Pla => build_pla(points, config)?,
        IndexMethod::Pra => build_pra(points, config)?,
    };
    let blocks = BlockMap::new(segments.iter().map(|s| s.offset).collect(), n as u64);
    let ctx = TrieBuild {
        src,
        config,
        blocks: &blocks,
    };
    let children = ctx.children(points, depth, 0)?;
    Ok(NodeModel {
        level: 0,
        depth,
        prefix: src.key(0)[..depth].to_vec(),
        method: config.method,
        length_keyed: false,
        radix: RadixTable::build(&segments, radix_budget(0)),
        segments,
        children,
    })
}

/// Record offsets where each block starts, plus the total record count.
struct BlockMap {
    starts: Vec<u64>,
    total: u64,
}

impl BlockMap {
    fn new(starts: Vec<u64>, total: u64) -> Self {
        BlockMap { starts, total }
    }

    /// Splits the global index range into per-block pieces.
    fn pieces(&self, range: Range<u64>) -> Vec<(u32, u64, Range<u64>)> {
        let mut out = Vec::new();
        let mut b = self.starts.partition_point(|&s| s <= range.start) - 1;
        let mut cursor = range.start;
        while cursor < range.end {
            let block_end = self.starts.get(b + 1).copied().unwrap_or(self.total);
            let end = block_end.min(range.end);
            out.push((b as u32, self.starts[b], cursor..end));
            cursor = end;
            b += 1;
        }
        out
    }
}

struct TrieBuild<'a, S: ?Sized> {
    src: &'a S,
    config: &'a BuildConfig,
    blocks: &'a BlockMap,
}

impl<S: KeySource + ?Sized> TrieBuild<'_, S> {
    /// Spawns one child per run of more than one key sharing a slice.
    fn children(&self, points: &[IndexedPoint], depth: usize, level: u32) -> Result<Vec<(u64, NodeModel)>> {
        let mut out = Vec::new();
        let mut i = 0;
        // Jump from one collision to the next; most keys have none.
        while let Some(k) = points[i..].windows(2).position(|w| w[0].x == w[1].x) {
            let run = i + k;
            let x = points[run].x;
            let end = run + 1 + points[run + 1..].iter().take_while(|p| p.x == x).count();
            let base = points[run].index as usize;
            let child = self.node(base..base + (end - run), depth + SLICE_BYTES, level + 1)?;
            out.push((x, child));
            i = end;
            if i >= points.len() {
                break;
            }
        }
        Ok(out)
    }

    fn node(&self, range: Range<usize>, start: usize, level: u32) -> Result<NodeModel> {
        let src = self.src;
        let length_keyed = range.clone().all(|i| src.key(i).len() <= start);
        let depth = if length_keyed {
            start
        } else {
            let first = src.key(range.start);
            let last = src.key(range.end - 1);
            let lcp = if first.len() <= start {
                0
            } else {
                common_prefix_len(&first[start..], &last[start.min(last.len())..])
            };
            start + lcp
        };
        let prefix = if depth > start {
            src.key(range.start)[start..depth].to_vec()
        } else {
            Vec::new()
        };
        let points: Vec<IndexedPoint> = range
            .map(|g| {
                let k = src.key(g);
                let x = if length_keyed { k.len() as u64 } else { slice_to_integer(k, depth) };
                IndexedPoint::new(x, g as u64, src.size(g))
            })
            .collect();
        let segments = self.segments_within_blocks(&points)?;
        let children = if length_keyed {
            Vec::new()
        } else {
            self.children(&points, depth, level)?
        };
        Ok(NodeModel {
            level,
            depth,
            prefix,
            method: self.config.method,
            length_keyed,
            radix: RadixTable::build(&segments, radix_budget(level)),
            segments,
            children,
        })
    }

    /// Fits a child's points without moving any block boundary: the points
    /// are cut at the physical blocks first, and PLA may add error cuts
    /// inside a block.
    fn segments_within_blocks(&self, points: &[IndexedPoint]) -> Result<Vec<SegmentModel>> {
        let first = points[0].index;
        let range = first..first + points.len() as u64;
        let mut segments = Vec::new();
        for (block_id, block_offset, piece) in self.blocks.pieces(range) {
            let slice = &points[(piece.start - first) as usize..(piece.end - first) as usize];
            match self.config.method {
                IndexMethod::Pla => {
                    let unbounded = BuildConfig {
                        max_block_bytes: u64::MAX,
                        ..*self.config
                    };
                    for mut seg in build_pla(slice, &unbounded)? {
                        seg.block_id = block_id;
                        seg.offset = block_offset;
                        segments.push(seg);
                    }
                }
                IndexMethod::Pra => segments.push(regression_segment(slice, block_offset, block_id)),
            }
        }
        Ok(segments)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::rounded_distance;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn records(keys: &[Vec<u8>], value_len: usize) -> Vec<Record> {
        keys.iter().map(|k| Record::new(k.clone(), vec![7; value_len])).collect()
    }

    /// Block of every record according to the root segments.
    fn physical_blocks(root: &NodeModel, n: usize) -> Vec<u32> {
        let offs = root.block_offsets();
        (0..n as u64).map(|i| (offs.partition_point(|&o| o <= i) - 1) as u32).collect()
    }

    fn assert_sound(root: &NodeModel, recs: &[Record]) {
        let blocks = physical_blocks(root, recs.len());
        for (i, r) in recs.iter().enumerate() {
            let h = root.lookup_hint(&r.key);
            assert_eq!(h.block_id, blocks[i], "key #{i} routed to the wrong block");
            let dist = (h.predicted_index as i64 - i as i64).unsigned_abs();
            assert!(
                dist <= h.max_error as u64,
                "key #{i}: |{} - {i}| > {}",
                h.predicted_index,
                h.max_error
            );
        }
    }

    #[test]
    fn shared_word_prefix_is_one_node() {
        let keys: Vec<Vec<u8>> = (0..100).map(|i| format!("user{:04}", i * 37).into_bytes()).collect();
        let mut keys = keys;
        keys.sort();
        let recs = records(&keys, 16);
        let root = build_trie(&recs, &BuildConfig::pla(32, 4096)).unwrap();
        assert_eq!(root.prefix, b"user");
        assert!(root.children.is_empty());
        assert_sound(&root, &recs);
    }

    #[test]
    fn long_shared_prefix_spawns_child() {
        let mut keys = Vec::new();
        for i in 0..50u8 {
            let mut k = b"common--".to_vec();
            k.extend_from_slice(b"samesame");
            k.extend_from_slice(&[b'a' + (i % 26), i]);
            keys.push(k);
        }
        keys.push(b"common-!other!!!".to_vec());
        keys.push(b"aaaa".to_vec());
        keys.sort();
        let recs = records(&keys, 40);
        let root = build_trie(&recs, &BuildConfig::pla(8, 512)).unwrap();
        assert_eq!(root.depth, 0);
        assert_eq!(root.children.len(), 1);
        let (slice, child) = &root.children[0];
        assert_eq!(*slice, slice_to_integer(b"common--", 0));
        assert_eq!(child.depth, 16);
        assert_eq!(child.level, 1);
        assert_eq!(child.prefix, b"samesame");
        assert_sound(&root, &recs);
    }

    #[test]
    fn integer_keys_match_flat_build() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut ints: Vec<u64> = (0..5000).map(|_| rng.random_range(0..10_000_000_000_000_000)).collect();
        ints.sort_unstable();
        ints.dedup();
        let keys: Vec<Vec<u8>> = ints.iter().map(|v| v.to_be_bytes().to_vec()).collect();
        let recs = records(&keys, 64);
        let cfg = BuildConfig::pla(32, 4096);
        let root = build_trie(&recs, &cfg).unwrap();
        assert!(root.children.is_empty());
        let depth = root.depth;
        let points: Vec<IndexedPoint> = recs
            .iter()
            .enumerate()
            .map(|(i, r)| IndexedPoint::new(slice_to_integer(&r.key, depth), i as u64, r.encoded_size() as u64))
            .collect();
        let flat = build_pla(&points, &cfg).unwrap();
        assert_eq!(flat, root.segments);
        for r in &recs {
            let x = slice_to_integer(&r.key, depth);
            let p = crate::model::predict(&flat, x);
            let h = root.lookup_hint(&r.key);
            assert_eq!((h.block_id, h.predicted_index), (p.block_id, p.predicted_index));
        }
        assert_sound(&root, &recs);
    }

    #[test]
    fn zero_padded_twins_use_length() {
        let keys: Vec<Vec<u8>> = vec![
            b"ab".to_vec(),
            b"ab\0".to_vec(),
            b"ab\0\0".to_vec(),
            b"ab\0\0\0\0\0\0\0\0x".to_vec(),
            b"abc".to_vec(),
        ];
        let recs = records(&keys, 3);
        for cfg in [BuildConfig::pla(1, 40), BuildConfig::pra(40), BuildConfig::pla(64, 4096)] {
            let root = build_trie(&recs, &cfg).unwrap();
            assert_sound(&root, &recs);
        }
    }

    #[test]
    fn colliding_groups_straddle_blocks() {
        // 300 keys share their first 8 bytes after the root prefix, so the
        // group spans many blocks and its child must name each one.
        let mut keys: Vec<Vec<u8>> = Vec::new();
        for i in 0..300u32 {
            let mut k = b"P".to_vec();
            k.extend_from_slice(b"12345678");
            k.extend_from_slice(&i.to_be_bytes());
            keys.push(k);
        }
        for i in 0..40u32 {
            keys.push(format!("P9{i:06}").into_bytes());
        }
        keys.sort();
        let recs = records(&keys, 30);
        for cfg in [BuildConfig::pla(4, 600), BuildConfig::pra(600), BuildConfig::pla(256, 32768)] {
            let root = build_trie(&recs, &cfg).unwrap();
            assert!(!root.children.is_empty());
            assert_sound(&root, &recs);
            root.check_layout(&root.block_offsets()).unwrap();
        }
    }

    #[test]
    fn absent_keys_still_hint() {
        let keys: Vec<Vec<u8>> = (10..60u8).map(|i| vec![b'k', i, i]).collect();
        let recs = records(&keys, 10);
        let root = build_trie(&recs, &BuildConfig::pla(2, 100)).unwrap();
        assert_eq!(root.lookup_hint(b"a").block_id, 0);
        assert_eq!(root.lookup_hint(b"\0").block_id, 0);
        let last = root.segments.last().unwrap().block_id;
        assert_eq!(root.lookup_hint(b"zzzz").block_id, last);
    }

    #[test]
    fn empty_input_rejected() {
        let err = build_trie(&[], &BuildConfig::default()).unwrap_err();
        assert_eq!(err.kind(), crate::ErrorKind::ConfigInvalid);
    }

    #[test]
    fn randomized_corpus_monotone_and_sound() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for trial in 0..20 {
            let prefixes: [&[u8]; 3] = [b"", b"tenant-0001/", b"x"];
            let mut keys: Vec<Vec<u8>> = (0..800)
                .map(|_| {
                    let mut k = prefixes[rng.random_range(0..3)].to_vec();
                    let len = rng.random_range(1..24);
                    // Small alphabet forces slice collisions.
                    k.extend((0..len).map(|_| b"ab\0z"[rng.random_range(0..4)]));
                    k
                })
                .collect();
            keys.sort();
            keys.dedup();
            let recs = records(&keys, rng.random_range(0..50));
            let cfg = if trial % 2 == 0 {
                BuildConfig::pla(1 + rng.random_range(0..64), 200 + rng.random_range(0..4000))
            } else {
                BuildConfig::pra(200 + rng.random_range(0..4000))
            };
            let root = build_trie(&recs, &cfg).unwrap();
            assert_sound(&root, &recs);
            let hints: Vec<u32> = recs.iter().map(|r| root.lookup_hint(&r.key).block_id).collect();
            assert!(hints.windows(2).all(|w| w[0] <= w[1]));
            for (i, r) in recs.iter().enumerate() {
                let h = root.lookup_hint(&r.key);
                let seg_err = rounded_distance(h.predicted_index as f64, i as u64);
                assert!(seg_err <= h.max_error as u64);
            }
        }
    }
}
