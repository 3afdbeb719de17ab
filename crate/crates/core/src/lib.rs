//! An embedded LSM-tree key-value store whose SSTables carry a learned
//! index aligned with their data blocks, so a point lookup reads exactly
//! one bounded-size block.
//!
//! - [`record`]: keys, records and fixed-width key slices.
//! - [`model`]: block-aligned PLA/PRA segment builders.
//! - [`index`]: the string-key trie over segments and its byte format.
//! - [`sstable`]: SSTable writer/reader with learned and binary-search indexes.
//! - [`engine`]: memtable, WAL, leveled compaction and the lookup pipeline.
//! - [`agent`]: the Q-learning agent tuning index method, error and block size.
//! - [`bench`]: datasets, workloads and reports.

pub mod agent;
pub mod bench;
pub mod engine;
pub mod error;
pub mod index;
pub mod model;
pub mod record;
pub mod sstable;

pub use error::{ErrorKind, Result, StoreError};
pub use model::{BuildConfig, IndexMethod, IndexedPoint, SegmentModel};
pub use record::{compare_keys, slice_to_integer, KeySlice, Record};
