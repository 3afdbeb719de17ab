use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal};

use crate::error::{Result, StoreError};
use crate::record::{Record, MAX_KEY_BYTES};

/// Key/value size profile of a production trace: mean and standard
/// deviation of key and value lengths, plus the 4-byte application prefix
/// every generated key starts with.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KvProfile {
    pub name: &'static str,
    pub key_mean: f64,
    pub key_sd: f64,
    pub value_mean: f64,
    pub value_sd: f64,
    pub prefix: [u8; 4],
}

impl KvProfile {
    pub const UDB: KvProfile = KvProfile {
        name: "udb",
        key_mean: 27.1,
        key_sd: 2.6,
        value_mean: 126.7,
        value_sd: 22.1,
        prefix: *b"udb:",
    };
    pub const ZIPPYDB: KvProfile = KvProfile {
        name: "zippydb",
        key_mean: 47.9,
        key_sd: 3.7,
        value_mean: 42.9,
        value_sd: 26.1,
        prefix: *b"zdb:",
    };
    pub const UP2X: KvProfile = KvProfile {
        name: "up2x",
        key_mean: 10.4,
        key_sd: 1.4,
        value_mean: 46.8,
        value_sd: 11.6,
        prefix: *b"up2:",
    };
}

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetKind {
    /// `floor(exp(N(0, 2²)) · 10⁹)`, 8-byte big-endian.
    Logn,
    /// Uniform on `[0, 10¹⁶)`, 8-byte big-endian.
    Uni,
    /// SOSD binary key file: `u64` count then `u64` keys, little-endian.
    FilePairs(PathBuf),
    VariableKv(KvProfile),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    pub count: usize,
    /// Value length for the integer-key kinds.
    pub value_bytes: usize,
    pub seed: u64,
}

impl DatasetSpec {
    pub fn new(kind: DatasetKind, count: usize, seed: u64) -> Self {
        DatasetSpec {
            kind,
            count,
            value_bytes: 64,
            seed,
        }
    }

    /// Parses a CLI name: `logn`, `uni`, `udb`, `zippydb`, `up2x` or `file:<path>`.
    pub fn parse(name: &str, count: usize, seed: u64) -> Result<Self> {
        let kind = match name {
            "logn" => DatasetKind::Logn,
            "uni" => DatasetKind::Uni,
            "udb" => DatasetKind::VariableKv(KvProfile::UDB),
            "zippydb" => DatasetKind::VariableKv(KvProfile::ZIPPYDB),
            "up2x" => DatasetKind::VariableKv(KvProfile::UP2X),
            other => match other.strip_prefix("file:") {
                Some(p) if !p.is_empty() => DatasetKind::FilePairs(PathBuf::from(p)),
                _ => return Err(StoreError::config(format!("unknown dataset `{name}`"))),
            },
        };
        Ok(DatasetSpec::new(kind, count, seed))
    }

    pub fn name(&self) -> String {
        match &self.kind {
            DatasetKind::Logn => "logn".into(),
            DatasetKind::Uni => "uni".into(),
            DatasetKind::FilePairs(p) => format!("file:{}", p.display()),
            DatasetKind::VariableKv(p) => p.name.into(),
        }
    }
}

/// Sorted, distinct records.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub records: Vec<Record>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Writes the records back to back in their on-disk encoding.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        for r in &self.records {
            r.encode_into(&mut buf);
        }
        fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        let mut records = Vec::new();
        let mut pos = 0;
        while pos < bytes.len() {
            let (r, used) = Record::decode(&bytes[pos..])?;
            records.push(r);
            pos += used;
        }
        if records.windows(2).any(|w| w[0].key >= w[1].key) {
            return Err(StoreError::config("dataset file is not sorted"));
        }
        Ok(Dataset {
            name: path.display().to_string(),
            records,
        })
    }
}

pub fn generate_dataset(spec: &DatasetSpec) -> Result<Dataset> {
    if spec.count == 0 {
        return Err(StoreError::config("dataset needs at least one key"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let keys: BTreeSet<Vec<u8>> = match &spec.kind {
        DatasetKind::Logn => {
            let d = LogNormal::<f64>::new(0.0, 2.0).map_err(|e| StoreError::config(e.to_string()))?;
            distinct(spec.count, || ((d.sample(&mut rng) * 1e9).floor() as u64).to_be_bytes().to_vec())?
        }
        DatasetKind::Uni => distinct(spec.count, || rng.random_range(0..10_000_000_000_000_000u64).to_be_bytes().to_vec())?,
        DatasetKind::VariableKv(p) => {
            let len = Normal::<f64>::new(p.key_mean, p.key_sd).map_err(|e| StoreError::config(e.to_string()))?;
            distinct(spec.count, || {
                let n = clipped(len.sample(&mut rng), p.prefix.len() + 1, MAX_KEY_BYTES);
                let mut k = p.prefix.to_vec();
                k.resize(n, 0);
                rng.fill_bytes(&mut k[p.prefix.len()..]);
                k
            })?
        }
        DatasetKind::FilePairs(path) => read_sosd(path, spec.count)?,
    };
    let value_len: Box<dyn FnMut(&mut ChaCha8Rng) -> usize> = match &spec.kind {
        DatasetKind::VariableKv(p) => {
            let d = Normal::new(p.value_mean, p.value_sd).map_err(|e| StoreError::config(e.to_string()))?;
            Box::new(move |r| clipped(d.sample(r), 1, 1 << 16))
        }
        _ => {
            let n = spec.value_bytes;
            Box::new(move |_| n)
        }
    };
    let mut value_len = value_len;
    let records = keys
        .into_iter()
        .map(|k| {
            let mut v = vec![0u8; value_len(&mut rng)];
            rng.fill_bytes(&mut v);
            Record::new(k, v)
        })
        .collect();
    Ok(Dataset {
        name: spec.name(),
        records,
    })
}

fn clipped(x: f64, lo: usize, hi: usize) -> usize {
    (x.round().max(lo as f64) as usize).min(hi)
}

fn distinct(count: usize, mut draw: impl FnMut() -> Vec<u8>) -> Result<BTreeSet<Vec<u8>>> {
    let mut set = BTreeSet::new();
    let budget = count.saturating_mul(50).max(1000);
    for _ in 0..budget {
        if set.len() == count {
            break;
        }
        set.insert(draw());
    }
    if set.len() < count {
        return Err(StoreError::config(format!(
            "could only draw {} distinct keys of {count}",
            set.len()
        )));
    }
    Ok(set)
}

fn read_sosd(path: &Path, count: usize) -> Result<BTreeSet<Vec<u8>>> {
    let bytes = fs::read(path)?;
    let header: [u8; 8] = bytes
        .get(..8)
        .and_then(|b| b.try_into().ok())
        .ok_or_else(|| StoreError::config("SOSD file shorter than its header"))?;
    let n = u64::from_le_bytes(header) as usize;
    if bytes.len() != 8 + n.saturating_mul(8) {
        return Err(StoreError::config(format!(
            "SOSD header says {n} keys, file holds {} bytes",
            bytes.len()
        )));
    }
    let set: BTreeSet<Vec<u8>> = bytes[8..]
        .chunks_exact(8)
        .take(count)
        .map(|c| u64::from_le_bytes(c.try_into().unwrap()).to_be_bytes().to_vec())
        .collect();
    if set.is_empty() {
        return Err(StoreError::config("SOSD file holds no keys"));
    }
    Ok(set)
}
