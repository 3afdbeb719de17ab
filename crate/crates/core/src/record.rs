//! Key/value records, key ordering and fixed-width key slices.
//!
//! A record is encoded as `key_len: u32 LE | value_len: u32 LE | key | value`.
//! Bit 31 of `value_len` marks a tombstone; values are capped well below
//! that bit so the two never collide.

use std::cmp::Ordering;

use crate::error::{Result, StoreError};

/// Width of the numeric key slice compared by the index, in bytes.
pub const SLICE_BYTES: usize = 8;
pub const MAX_KEY_BYTES: usize = 4096;
pub const MAX_VALUE_BYTES: usize = 1 << 20;
/// Fixed per-record header: 4-byte key length + 4-byte value length.
pub const RECORD_HEADER_BYTES: usize = 8;

const TOMBSTONE_FLAG: u32 = 1 << 31;

/// A key/value pair, or a deletion marker for `key`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Record {
    pub key: Vec<u8>,
    pub value: Vec<u8>,
    pub tombstone: bool,
}

impl Record {
    pub fn new(key: impl Into<Vec<u8>>, value: impl Into<Vec<u8>>) -> Self {
        Record {
            key: key.into(),
            value: value.into(),
            tombstone: false,
        }
    }

    pub fn tombstone(key: impl Into<Vec<u8>>) -> Self {
        Record {
            key: key.into(),
            value: Vec::new(),
            tombstone: true,
        }
    }

    /// Checks the key and value length limits.
    pub fn validate(&self) -> Result<()> {
        validate_key(&self.key)?;
        if self.value.len() > MAX_VALUE_BYTES {
            return Err(StoreError::config(format!(
                "value of {} bytes exceeds the {MAX_VALUE_BYTES} byte limit",
                self.value.len()
            )));
        }
        if self.tombstone && !self.value.is_empty() {
            return Err(StoreError::config("tombstone carries a value"));
        }
        Ok(())
    }

    pub fn encoded_size(&self) -> usize {
        encoded_size(self.key.len(), self.value.len())
    }

    pub fn encode_into(&self, out: &mut Vec<u8>) {
        let mut value_len = self.value.len() as u32;
        if self.tombstone {
            value_len |= TOMBSTONE_FLAG;
        }
        out.extend_from_slice(&(self.key.len() as u32).to_le_bytes());
        out.extend_from_slice(&value_len.to_le_bytes());
        out.extend_from_slice(&self.key);
        out.extend_from_slice(&self.value);
    }

    /// Decodes one record from the front of `buf`, returning it and the
    /// number of bytes consumed.
    pub fn decode(buf: &[u8]) -> Result<(Record, usize)> {
        let view = RecordView::parse(buf)?;
        let used = view.encoded_size();
        Ok((view.to_record(), used))
    }
}

/// Borrowed view of an encoded record.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RecordView<'a> {
    pub key: &'a [u8],
    pub value: &'a [u8],
    pub tombstone: bool,
}

impl<'a> RecordView<'a> {
    pub fn parse(buf: &'a [u8]) -> Result<Self> {
        if buf.len() < RECORD_HEADER_BYTES {
            return Err(StoreError::corrupt("record header truncated"));
        }
        let key_len = u32::from_le_bytes(buf[0..4].try_into().unwrap()) as usize;
        let raw_value_len = u32::from_le_bytes(buf[4..8].try_into().unwrap());
        let tombstone = raw_value_len & TOMBSTONE_FLAG != 0;
        let value_len = (raw_value_len & !TOMBSTONE_FLAG) as usize;
        let end = RECORD_HEADER_BYTES + key_len + value_len;
        if key_len == 0 || key_len > MAX_KEY_BYTES || end > buf.len() {
            return Err(StoreError::corrupt("record body out of bounds"));
        }
        Ok(RecordView {
            key: &buf[RECORD_HEADER_BYTES..RECORD_HEADER_BYTES + key_len],
            value: &buf[RECORD_HEADER_BYTES + key_len..end],
            tombstone,
        })
    }

    pub fn encoded_size(&self) -> usize {
        encoded_size(self.key.len(), self.value.len())
    }

    pub fn to_record(&self) -> Record {
        Record {
            key: self.key.to_vec(),
            value: self.value.to_vec(),
            tombstone: self.tombstone,
        }
    }
}

pub fn encoded_size(key_len: usize, value_len: usize) -> usize {
    RECORD_HEADER_BYTES + key_len + value_len
}

pub fn validate_key(key: &[u8]) -> Result<()> {
    if key.is_empty() {
        return Err(StoreError::config("empty key"));
    }
    if key.len() > MAX_KEY_BYTES {
        return Err(StoreError::config(format!(
            "key of {} bytes exceeds the {MAX_KEY_BYTES} byte limit",
            key.len()
        )));
    }
    Ok(())
}

/// Lexicographic byte order; a key that is a strict prefix of another sorts first.
pub fn compare_keys(a: &[u8], b: &[u8]) -> Ordering {
    a.cmp(b)
}

/// Big-endian decode of `key[depth..depth + 8]`, right-padded with zeros.
#[inline]
pub fn slice_to_integer(key: &[u8], depth: usize) -> u64 {
    if let Some(window) = key.get(depth..depth + SLICE_BYTES) {
        return u64::from_be_bytes(window.try_into().unwrap());
    }
    let mut bytes = [0u8; SLICE_BYTES];
    if depth < key.len() {
        let end = key.len().min(depth + SLICE_BYTES);
        bytes[..end - depth].copy_from_slice(&key[depth..end]);
    }
    u64::from_be_bytes(bytes)
}

/// The fixed-width numeric window of a key at some byte depth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct KeySlice(pub [u8; SLICE_BYTES]);

impl KeySlice {
    pub fn of(key: &[u8], depth: usize) -> Self {
        KeySlice(slice_to_integer(key, depth).to_be_bytes())
    }

    pub fn as_integer(&self) -> u64 {
        u64::from_be_bytes(self.0)
    }
}

/// Length of the longest common prefix of two byte strings.
pub fn common_prefix_len(a: &[u8], b: &[u8]) -> usize {
    a.iter().zip(b).take_while(|(x, y)| x == y).count()
}

/// Lexicographic comparison that also reports how many bytes it examined.
pub fn compare_counted(a: &[u8], b: &[u8]) -> (Ordering, usize) {
    let shared = common_prefix_len(a, b);
    (a.cmp(b), (shared + 1).min(a.len().max(b.len())))
}

/// Orders two keys that share their first `skip` bytes by comparing the
/// 8-byte slice at `skip` as integers, then the remaining bytes, then length.
///
/// Returns the ordering and the number of key bytes examined.
pub fn compare_from(a: &[u8], b: &[u8], skip: usize) -> (Ordering, usize) {
    let sa = slice_to_integer(a, skip);
    let sb = slice_to_integer(b, skip);
    if sa != sb {
        return (sa.cmp(&sb), SLICE_BYTES);
    }
    let tail = skip + SLICE_BYTES;
    let ra = a.get(tail..).unwrap_or(&[]);
    let rb = b.get(tail..).unwrap_or(&[]);
    let shared = common_prefix_len(ra, rb);
    let examined = SLICE_BYTES + (shared + 1).min(ra.len().max(rb.len()));
    let ord = ra.cmp(rb).then(a.len().cmp(&b.len()));
    (ord, examined)
}
