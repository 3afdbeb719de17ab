use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Zipf};
use serde::{Deserialize, Serialize};
use xxhash_rust::xxh64::xxh64;

use crate::error::{Result, StoreError};
use crate::record::Record;

pub const ZIPF_EXPONENT: f64 = 0.99;
pub const SCAN_WINDOW: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mix {
    ReadOnly,
    /// 90% reads, 10% inserts.
    ReadHeavy,
    /// 50% reads, 50% inserts.
    Balanced,
    WriteOnly,
}

impl Mix {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "ro" => Mix::ReadOnly,
            "rh" => Mix::ReadHeavy,
            "bal" => Mix::Balanced,
            "wo" => Mix::WriteOnly,
            _ => return Err(StoreError::config(format!("unknown workload `{s}`"))),
        })
    }

    pub fn label(self) -> &'static str {
        match self {
            Mix::ReadOnly => "ro",
            Mix::ReadHeavy => "rh",
            Mix::Balanced => "bal",
            Mix::WriteOnly => "wo",
        }
    }

    pub fn read_fraction(self) -> f64 {
        match self {
            Mix::ReadOnly => 1.0,
            Mix::ReadHeavy => 0.9,
            Mix::Balanced => 0.5,
            Mix::WriteOnly => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RequestDist {
    Zipfian,
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub mix: Mix,
    pub op_count: usize,
    pub request_dist: RequestDist,
    /// Reads become forward scans of [`SCAN_WINDOW`] pairs.
    pub scan: bool,
    pub seed: u64,
}

impl WorkloadSpec {
    pub fn new(mix: Mix, op_count: usize, seed: u64) -> Self {
        WorkloadSpec {
            mix,
            op_count,
            request_dist: RequestDist::Zipfian,
            scan: false,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Op {
    Get(Vec<u8>),
    Scan(Vec<u8>),
    Put(Record),
}

/// A reproducible op stream plus the records to bulk-load before it runs.
#[derive(Debug, Clone, PartialEq)]
pub struct Plan {
    /// Sorted; loaded before the first op.
    pub preload: Vec<Record>,
    pub ops: Vec<Op>,
}

/// Zipfian ranks over `n` items, scrambled so popular items are spread
/// across the key space.
pub struct ScrambledZipf {
    n: u64,
    zipf: Zipf<f64>,
}

impl ScrambledZipf {
    pub fn new(n: u64, s: f64) -> Result<Self> {
        let zipf = Zipf::new(n as f64, s).map_err(|e| StoreError::config(e.to_string()))?;
        Ok(ScrambledZipf { n, zipf })
    }

    /// Unscrambled rank in `0..n`, 0 the most popular.
    pub fn rank<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        (self.zipf.sample(rng) as u64 - 1).min(self.n - 1)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        xxh64(&self.rank(rng).to_le_bytes(), 0) % self.n
    }
}

/// Splits `records` (sorted) into a preload and an op stream.
///
/// Inserts take fresh keys from the tail of a seeded shuffle of the
/// dataset; those keys are held out of the preload. Once fresh keys run out
/// further writes overwrite random existing keys. Reads target preloaded
/// keys.
pub fn plan(records: &[Record], spec: &WorkloadSpec) -> Result<Plan> {
    if records.is_empty() {
        return Err(StoreError::config("workload needs a non-empty dataset"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let read_p = spec.mix.read_fraction();
    let is_read: Vec<bool> = (0..spec.op_count).map(|_| rng.random_bool(read_p)).collect();
    let writes = is_read.iter().filter(|r| !**r).count();

    let mut order: Vec<usize> = (0..records.len()).collect();
    order.shuffle(&mut rng);
    // With no reads nothing is preloaded; otherwise keep at least one key.
    let held = if writes == spec.op_count {
        records.len()
    } else {
        writes.min(records.len() - 1)
    };
    let (kept, fresh) = order.split_at(records.len() - held);
    let mut kept = kept.to_vec();
    kept.sort_unstable();
    let preload: Vec<Record> = kept.iter().map(|&i| records[i].clone()).collect();

    let dist = match spec.request_dist {
        RequestDist::Zipfian if !preload.is_empty() => Some(ScrambledZipf::new(preload.len() as u64, ZIPF_EXPONENT)?),
        _ => None,
    };
    let mut fresh = fresh.iter();
    let mut ops = Vec::with_capacity(spec.op_count);
    for read in is_read {
        if read {
            let i = match &dist {
                Some(z) => z.sample(&mut rng) as usize,
                None => rng.random_range(0..preload.len()),
            };
            let key = preload[i].key.clone();
            ops.push(if spec.scan { Op::Scan(key) } else { Op::Get(key) });
        } else {
            let src = match fresh.next() {
                Some(&i) => &records[i],
                None => &records[rng.random_range(0..records.len())],
            };
            let mut value = src.value.clone();
            if let Some(b) = value.first_mut() {
                *b = b.wrapping_add(1);
            }
            ops.push(Op::Put(Record::new(src.key.clone(), value)));
        }
    }
    Ok(Plan { preload, ops })
}
