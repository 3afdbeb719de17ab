use std::fs::{self, File};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, StoreError};

pub(crate) const MANIFEST_FILE: &str = "MANIFEST";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableEntry {
    pub id: u64,
    /// Hex of the smallest and largest key, checked against the file on open.
    pub min_key: String,
    pub max_key: String,
    pub records: u64,
    pub file_bytes: u64,
}

/// Persistent list of live tables per level. Level 0 is newest first; deeper
/// levels are sorted by key range.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub next_file_id: u64,
    pub next_wal_id: u64,
    pub tables_created: u64,
    pub levels: Vec<Vec<TableEntry>>,
}

pub(crate) fn table_file_name(id: u64) -> String {
    format!("{id:06}.sst")
}

impl Manifest {
    pub fn load(dir: &Path) -> Result<Option<Self>> {
        let path = dir.join(MANIFEST_FILE);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(e.into()),
        };
        let m: Manifest = serde_json::from_slice(&bytes).map_err(|e| StoreError::corrupt(format!("MANIFEST: {e}")))?;
        Ok(Some(m))
    }

    /// Replaces the manifest atomically: write a temporary file, sync it,
    /// rename it over the old one, then sync the directory.
    pub fn store(&self, dir: &Path) -> Result<()> {
        let tmp = dir.join("MANIFEST.tmp");
        let bytes = serde_json::to_vec_pretty(self)?;
        {
            let f = File::create(&tmp)?;
            use std::io::Write;
            (&f).write_all(&bytes)?;
            f.sync_all()?;
        }
        fs::rename(&tmp, dir.join(MANIFEST_FILE))?;
        sync_dir(dir)
    }
}

#[cfg(unix)]
pub(crate) fn sync_dir(dir: &Path) -> Result<()> {
    File::open(dir)?.sync_all()?;
    Ok(())
}

#[cfg(not(unix))]
pub(crate) fn sync_dir(_dir: &Path) -> Result<()> {
    Ok(())
}
