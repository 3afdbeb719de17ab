//! Append-only write-ahead log.
//!
//! Entry: `len u32 | xxh64(payload) u64 | payload`, where the payload is an
//! encoded [`Record`]. Replay stops at the first torn or corrupt entry: only
//! the tail can be incomplete, since entries are appended in order.

use std::fs::{File, OpenOptions};
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use xxhash_rust::xxh64::xxh64;

use crate::error::Result;
use crate::record::Record;

const ENTRY_HEADER: usize = 12;

pub(crate) struct Wal {
    path: PathBuf,
    file: File,
    sync: bool,
    buf: Vec<u8>,
}

impl Wal {
    pub fn open(path: &Path, sync: bool) -> Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Wal {
            path: path.to_path_buf(),
            file,
            sync,
            buf: Vec::new(),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&mut self, record: &Record) -> Result<()> {
        self.buf.clear();
        self.buf.extend_from_slice(&[0; ENTRY_HEADER]);
        record.encode_into(&mut self.buf);
        let len = (self.buf.len() - ENTRY_HEADER) as u32;
        let sum = xxh64(&self.buf[ENTRY_HEADER..], 0);
        self.buf[..4].copy_from_slice(&len.to_le_bytes());
        self.buf[4..12].copy_from_slice(&sum.to_le_bytes());
        self.file.write_all(&self.buf)?;
        if self.sync {
            self.file.sync_data()?;
        }
        Ok(())
    }

    pub fn sync(&self) -> Result<()> {
        self.file.sync_data()?;
        Ok(())
    }
}

/// Reads every intact entry of the log at `path`; a missing file is empty.
pub(crate) fn replay(path: &Path) -> Result<Vec<Record>> {
    let mut bytes = Vec::new();
    match File::open(path) {
        Ok(mut f) => {
            f.read_to_end(&mut bytes)?;
        }
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e.into()),
    }
    let mut out = Vec::new();
    let mut pos = 0;
    while pos + ENTRY_HEADER <= bytes.len() {
        let len = u32::from_le_bytes(bytes[pos..pos + 4].try_into().unwrap()) as usize;
        let sum = u64::from_le_bytes(bytes[pos + 4..pos + 12].try_into().unwrap());
        let start = pos + ENTRY_HEADER;
        let Some(payload) = bytes.get(start..start + len) else { break };
        if xxh64(payload, 0) != sum {
            break;
        }
        match Record::decode(payload) {
            Ok((rec, used)) if used == len => out.push(rec),
            _ => break,
        }
        pos = start + len;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn replay_stops_at_torn_tail() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("wal.log");
        let mut wal = Wal::open(&path, false).unwrap();
        for i in 0..10u32 {
            wal.append(&Record::new(i.to_be_bytes().to_vec(), vec![i as u8; 5])).unwrap();
        }
        wal.append(&Record::tombstone(b"gone".to_vec())).unwrap();
        drop(wal);
        let full = std::fs::read(&path).unwrap();
        assert_eq!(replay(&path).unwrap().len(), 11);
        assert!(replay(&path).unwrap()[10].tombstone);
        std::fs::write(&path, &full[..full.len() - 3]).unwrap();
        assert_eq!(replay(&path).unwrap().len(), 10);
        let mut bad = full.clone();
        bad[ENTRY_HEADER + 2] ^= 1;
        std::fs::write(&path, &bad).unwrap();
        assert!(replay(&path).unwrap().is_empty());
        assert!(replay(&dir.path().join("none.log")).unwrap().is_empty());
    }
}
