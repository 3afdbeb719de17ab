//! The LSM tree: memtable, write-ahead log, flush, leveled compaction and
//! the multi-level lookup path.
//!
//! Lookups check the active memtable, sealed memtables newest first, every
//! level-0 table newest first, then at most one table per deeper level. Each
//! table probe reads at most one data block.
//!
//! Flushes and compactions run either inline on the writing thread or on a
//! background worker ([`Options::background`]); both paths serialize on one
//! work lock and publish results by swapping an immutable [`Version`].

mod manifest;
mod merge;
mod metrics;
mod wal;

use std::collections::BTreeMap;
use std::fs;
use std::ops::Bound;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{self, Sender};
use std::sync::{Arc, Mutex, MutexGuard, RwLock};
use std::thread::JoinHandle;
use std::time::Instant;

use crossbeam_queue::ArrayQueue;
use serde::Serialize;

use crate::agent::{Agent, AgentConfig, Decision, QState};
use crate::error::{Result, StoreError};
use crate::model::BuildConfig;
use crate::record::{encoded_size, validate_key, Record, MAX_KEY_BYTES, MAX_VALUE_BYTES};
use crate::sstable::{write_sstable, IndexKind, Lookup, ProbeStats, SSTableHandle, TableIter};

pub use manifest::{Manifest, TableEntry};
pub use metrics::{MetricsSummary, QueryMetrics, Source};

use manifest::table_file_name;
use merge::{MergeIter, Source as MergeSource};
use wal::Wal;

pub const DATA_DIR_ENV: &str = "DOBLIX_DIR";
const WAL_FILE: &str = "wal.log";
const AGENT_FILE: &str = "agent.json";
const LATENCY_MAILBOX: usize = 1 << 16;
/// Sealed memtables a writer tolerates before flushing on its own thread.
const MAX_SEALED: usize = 4;

#[derive(Debug, Clone)]
pub struct Options {
    pub dir: PathBuf,
    /// Memtable payload that triggers a seal and flush.
    pub memtable_bytes: usize,
    /// Level-0 table count that triggers a merge into level 1.
    pub l0_trigger: usize,
    pub level_ratio: u64,
    /// Size budget of level 1; level `i` gets `base · ratio^(i−1)`.
    pub base_level_bytes: u64,
    /// Compaction output is cut into tables of about this payload size.
    pub target_file_bytes: u64,
    pub max_levels: usize,
    pub index_kind: IndexKind,
    /// Index configuration used when the agent is disabled, and its start state otherwise.
    pub build_config: BuildConfig,
    /// `None` freezes `build_config`.
    pub agent: Option<AgentConfig>,
    /// Run flushes and compactions on a worker thread.
    pub background: bool,
    /// fsync the log after every write.
    pub sync_wal: bool,
}

impl Options {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Options {
            dir: dir.into(),
            memtable_bytes: 8 << 20,
            l0_trigger: 4,
            level_ratio: 10,
            base_level_bytes: 64 << 20,
            target_file_bytes: 8 << 20,
            max_levels: 7,
            index_kind: IndexKind::Learned,
            build_config: BuildConfig::default(),
            agent: Some(AgentConfig::default()),
            background: false,
            sync_wal: false,
        }
    }

    /// Options rooted at `$DOBLIX_DIR`, or `./doblix-data` when unset.
    pub fn from_env() -> Self {
        let dir = std::env::var_os(DATA_DIR_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("doblix-data"));
        Options::new(dir)
    }

    pub fn validate(&self) -> Result<()> {
        self.build_config.validate()?;
        if let Some(a) = &self.agent {
            a.validate()?;
        }
        if self.memtable_bytes == 0
            || self.l0_trigger < 1
            || self.level_ratio < 2
            || self.base_level_bytes == 0
            || self.target_file_bytes == 0
            || self.max_levels < 2
        {
            return Err(StoreError::config("engine sizes must be positive, ratio ≥ 2, levels ≥ 2"));
        }
        Ok(())
    }
}

/// Live tables per level, shared read-only by lookups.
#[derive(Debug, Default)]
pub struct Version {
    /// Level 0 newest first; deeper levels sorted and disjoint.
    pub levels: Vec<Vec<Arc<SSTableHandle>>>,
}

impl Version {
    fn level_bytes(&self, level: usize) -> u64 {
        self.levels[level].iter().map(|t| t.file_size()).sum()
    }

    fn is_empty(&self) -> bool {
        self.levels.iter().all(|l| l.is_empty())
    }
}

#[derive(Default)]
struct Memtable {
    map: BTreeMap<Vec<u8>, Option<Vec<u8>>>,
    bytes: usize,
}

impl Memtable {
    fn insert(&mut self, key: Vec<u8>, value: Option<Vec<u8>>) {
        let add = encoded_size(key.len(), value.as_ref().map_or(0, |v| v.len()));
        if let Some(old) = self.map.insert(key.clone(), value) {
            self.bytes -= encoded_size(key.len(), old.map_or(0, |v| v.len()));
        }
        self.bytes += add;
    }

    fn records(&self) -> Vec<Record> {
        self.map
            .iter()
            .map(|(k, v)| match v {
                Some(v) => Record::new(k.clone(), v.clone()),
                None => Record::tombstone(k.clone()),
            })
            .collect()
    }

    fn range(&self, from: &[u8], to: &[u8]) -> Vec<Record> {
        self.map
            .range::<[u8], _>((Bound::Included(from), Bound::Included(to)))
            .map(|(k, v)| match v {
                Some(v) => Record::new(k.clone(), v.clone()),
                None => Record::tombstone(k.clone()),
            })
            .collect()
    }
}

struct Sealed {
    mem: Memtable,
    wal_path: PathBuf,
}

struct State {
    mem: Memtable,
    /// Oldest first.
    sealed: Vec<Arc<Sealed>>,
    version: Arc<Version>,
    manifest: Manifest,
    next_wal_id: u64,
}

struct Tuning {
    agent: Option<Agent>,
    fixed: BuildConfig,
    window_index_bytes: u64,
    window_tables: u64,
    decisions: Vec<Decision>,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct EngineStats {
    pub tables_created: u64,
    /// Table stats handed to the tuning path; equals `tables_created`.
    pub stats_forwarded: u64,
    pub flushes: u64,
    pub compactions: u64,
    pub compaction_time_ns: u64,
    pub episodes: u64,
    pub level_tables: Vec<usize>,
    pub level_bytes: Vec<u64>,
    pub index_bytes: u64,
}

struct Inner {
    opts: Options,
    state: RwLock<State>,
    wal: Mutex<Wal>,
    work: Mutex<()>,
    tuning: Mutex<Tuning>,
    latencies: ArrayQueue<u64>,
    bg_error: Mutex<Option<String>>,
    compact_cursor: Mutex<Vec<Vec<u8>>>,
    stats_forwarded: AtomicU64,
    flushes: AtomicU64,
    compactions: AtomicU64,
    compaction_ns: AtomicU64,
}

enum Job {
    Flush,
    Stop,
}

/// An open store. Dropping it stops the background worker.
pub struct Db {
    inner: Arc<Inner>,
    worker: Option<(Sender<Job>, JoinHandle<()>)>,
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

impl Db {
    pub fn open(opts: Options) -> Result<Self> {
        opts.validate()?;
        fs::create_dir_all(&opts.dir)?;
        let dir = opts.dir.clone();
        let mut manifest = Manifest::load(&dir)?.unwrap_or_default();
        manifest.levels.resize(opts.max_levels.max(manifest.levels.len()), Vec::new());

        let mut levels = Vec::with_capacity(manifest.levels.len());
        let mut live = std::collections::HashSet::new();
        for entries in &manifest.levels {
            let mut tables = Vec::with_capacity(entries.len());
            for e in entries {
                let t = SSTableHandle::open(&dir.join(table_file_name(e.id)))?;
                if hex::encode(t.min_key()) != e.min_key || hex::encode(t.max_key()) != e.max_key {
                    return Err(StoreError::corrupt(format!("table {} disagrees with MANIFEST", e.id)));
                }
                live.insert(table_file_name(e.id));
                tables.push(Arc::new(t));
            }
            levels.push(tables);
        }
        // Leftovers of interrupted flushes or compactions.
        let mut wal_ids = Vec::new();
        for entry in fs::read_dir(&dir)? {
            let name = entry?.file_name().to_string_lossy().into_owned();
            if (name.ends_with(".sst") && !live.contains(&name)) || name.ends_with(".tmp") {
                fs::remove_file(dir.join(&name))?;
            } else if let Some(id) = name
                .strip_prefix("wal.")
                .and_then(|s| s.strip_suffix(".log"))
                .and_then(|s| s.parse::<u64>().ok())
            {
                wal_ids.push(id);
            }
        }
        wal_ids.sort_unstable();

        // Sealed logs first, then the active one, oldest write first.
        let mut mem = Memtable::default();
        let mut logs: Vec<PathBuf> = wal_ids.iter().map(|id| dir.join(format!("wal.{id}.log"))).collect();
        logs.push(dir.join(WAL_FILE));
        for path in &logs {
            for r in wal::replay(path)? {
                mem.insert(r.key, (!r.tombstone).then_some(r.value));
            }
        }
        // Rewrite the surviving entries into a single fresh log.
        let fresh = dir.join("wal.log.rewrite");
        {
            let mut w = Wal::open(&fresh, false)?;
            for r in mem.records() {
                w.append(&r)?;
            }
            w.sync()?;
        }
        fs::rename(&fresh, dir.join(WAL_FILE))?;
        for path in &logs[..logs.len() - 1] {
            fs::remove_file(path)?;
        }
        manifest::sync_dir(&dir)?;
        let wal = Wal::open(&dir.join(WAL_FILE), opts.sync_wal)?;

        let agent = match &opts.agent {
            None => None,
            Some(cfg) => {
                let path = dir.join(AGENT_FILE);
                if path.exists() {
                    Some(Agent::load(&path)?)
                } else {
                    let start = QState::from_config(&opts.build_config).unwrap_or_default();
                    let mut a = Agent::starting_at(*cfg, start)?;
                    a.prune(&measure_block_latencies(&dir)?);
                    Some(a)
                }
            }
        };

        let next_wal_id = wal_ids.last().map_or(manifest.next_wal_id, |m| (m + 1).max(manifest.next_wal_id));
        let inner = Arc::new(Inner {
            state: RwLock::new(State {
                mem,
                sealed: Vec::new(),
                version: Arc::new(Version { levels }),
                manifest,
                next_wal_id,
            }),
            wal: Mutex::new(wal),
            work: Mutex::new(()),
            tuning: Mutex::new(Tuning {
                agent,
                fixed: opts.build_config,
                window_index_bytes: 0,
                window_tables: 0,
                decisions: Vec::new(),
            }),
            latencies: ArrayQueue::new(LATENCY_MAILBOX),
            bg_error: Mutex::new(None),
            compact_cursor: Mutex::new(vec![Vec::new(); opts.max_levels]),
            stats_forwarded: AtomicU64::new(0),
            flushes: AtomicU64::new(0),
            compactions: AtomicU64::new(0),
            compaction_ns: AtomicU64::new(0),
            opts,
        });
        let worker = if inner.opts.background {
            let (tx, rx) = mpsc::channel::<Job>();
            let w = Arc::clone(&inner);
            let handle = std::thread::Builder::new().name("doblix-compaction".into()).spawn(move || {
                while let Ok(job) = rx.recv() {
                    match job {
                        Job::Flush => {
                            if let Err(e) = w.flush_sealed() {
                                *lock(&w.bg_error) = Some(e.to_string());
                            }
                        }
                        Job::Stop => break,
                    }
                }
            })?;
            Some((tx, handle))
        } else {
            None
        };
        Ok(Db { inner, worker })
    }

    pub fn dir(&self) -> &Path {
        &self.inner.opts.dir
    }

    pub fn options(&self) -> &Options {
        &self.inner.opts
    }

    pub fn put(&self, key: &[u8], value: &[u8]) -> Result<()> {
        validate_key(key)?;
        if value.len() > MAX_VALUE_BYTES {
            return Err(StoreError::config("value exceeds the size limit"));
        }
        self.write(Record::new(key.to_vec(), value.to_vec()))
    }

    pub fn delete(&self, key: &[u8]) -> Result<()> {
        validate_key(key)?;
        self.write(Record::tombstone(key.to_vec()))
    }

    fn write(&self, rec: Record) -> Result<()> {
        if let Some(e) = lock(&self.inner.bg_error).take() {
            return Err(StoreError::IoFailure(std::io::Error::other(e)));
        }
        let (sealed, backlog) = {
            let mut wal = lock(&self.inner.wal);
            wal.append(&rec)?;
            let mut st = self.inner.state.write().unwrap_or_else(|e| e.into_inner());
            st.mem.insert(rec.key, (!rec.tombstone).then_some(rec.value));
            if st.mem.bytes >= self.inner.opts.memtable_bytes {
                self.inner.seal(&mut st, &mut wal)?;
                (true, st.sealed.len())
            } else {
                (false, st.sealed.len())
            }
        };
        if sealed {
            match &self.worker {
                Some((tx, _)) if backlog <= MAX_SEALED => {
                    let _ = tx.send(Job::Flush);
                }
                _ => self.inner.flush_sealed()?,
            }
        }
        Ok(())
    }

    pub fn get(&self, key: &[u8]) -> Result<Vec<u8>> {
        self.get_with_metrics(key)?.0.ok_or(StoreError::KeyNotFound)
    }

    /// Looks `key` up and reports what the lookup cost.
    pub fn get_with_metrics(&self, key: &[u8]) -> Result<(Option<Vec<u8>>, QueryMetrics)> {
        let started = Instant::now();
        let mut probe = ProbeStats::default();
        let mut probed = 0u32;
        let (value, source) = self.inner.lookup(key, &mut probe, &mut probed)?;
        let latency = started.elapsed().as_nanos() as u64;
        if self.inner.opts.agent.is_some() {
            let _ = self.inner.latencies.push(latency);
        }
        Ok((value, QueryMetrics::new(&probe, probed, source, latency)))
    }

    /// Live pairs with `from <= key <= to`, in key order.
    pub fn scan(&self, from: &[u8], to: &[u8]) -> Result<Vec<(Vec<u8>, Vec<u8>)>> {
        self.scan_limit(from, to, usize::MAX)
    }

    /// At most `limit` live pairs starting at `from`.
    pub fn scan_from(&self, from: &[u8], limit: usize) -> Result<Vec<(Vec<u8>, Vec<u8>)>> {
        self.scan_limit(from, &[0xff; MAX_KEY_BYTES], limit)
    }

    fn scan_limit(&self, from: &[u8], to: &[u8], limit: usize) -> Result<Vec<(Vec<u8>, Vec<u8>)>> {
        if from > to {
            return Ok(Vec::new());
        }
        let mut sources: Vec<MergeSource<'static>> = Vec::new();
        let version = {
            let st = self.inner.state.read().unwrap_or_else(|e| e.into_inner());
            sources.push(Box::new(st.mem.range(from, to).into_iter().map(Ok)));
            for s in st.sealed.iter().rev() {
                sources.push(Box::new(s.mem.range(from, to).into_iter().map(Ok)));
            }
            Arc::clone(&st.version)
        };
        for (level, tables) in version.levels.iter().enumerate() {
            let overlapping: Vec<Arc<SSTableHandle>> = tables
                .iter()
                .filter(|t| t.min_key() <= to && t.max_key() >= from)
                .cloned()
                .collect();
            if level == 0 {
                for t in overlapping {
                    sources.push(Box::new(TableIter::range(t, from, to)?));
                }
            } else if !overlapping.is_empty() {
                // Disjoint and sorted: one chained source per level.
                let (from, to) = (from.to_vec(), to.to_vec());
                let chain = overlapping.into_iter().flat_map(move |t| match TableIter::range(t, &from, &to) {
                    Ok(it) => Box::new(it) as MergeSource<'static>,
                    Err(e) => Box::new(std::iter::once(Err(e))),
                });
                sources.push(Box::new(chain));
            }
        }
        let mut out = Vec::new();
        for r in MergeIter::new(sources)? {
            if out.len() >= limit {
                break;
            }
            let r = r?;
            if !r.tombstone {
                out.push((r.key, r.value));
            }
        }
        Ok(out)
    }

    /// Seals the memtable, writes every sealed memtable to level 0 and runs
    /// compaction until no level is over budget. Data is durable on return.
    pub fn flush(&self) -> Result<()> {
        {
            let mut wal = lock(&self.inner.wal);
            let mut st = self.inner.state.write().unwrap_or_else(|e| e.into_inner());
            if !st.mem.map.is_empty() {
                self.inner.seal(&mut st, &mut wal)?;
            }
            wal.sync()?;
        }
        self.inner.flush_sealed()?;
        self.inner.save_agent()
    }

    /// Loads sorted, distinct records straight into tables of one level.
    /// The store must be empty.
    pub fn bulk_load(&self, records: &[Record]) -> Result<()> {
        let _work = lock(&self.inner.work);
        {
            let st = self.inner.state.read().unwrap_or_else(|e| e.into_inner());
            if !st.mem.map.is_empty() || !st.sealed.is_empty() || !st.version.is_empty() {
                return Err(StoreError::config("bulk_load needs an empty store"));
            }
        }
        if records.windows(2).any(|w| w[0].key >= w[1].key) {
            return Err(StoreError::config("bulk_load records must be sorted and distinct"));
        }
        if records.is_empty() {
            return Ok(());
        }
        let total: u64 = records.iter().map(|r| r.encoded_size() as u64).sum();
        let opts = &self.inner.opts;
        let mut level = 1;
        while level + 1 < opts.max_levels && self.inner.level_target(level) < total {
            level += 1;
        }
        let mut outputs = Vec::new();
        let mut start = 0;
        let mut bytes = 0u64;
        for (i, r) in records.iter().enumerate() {
            bytes += r.encoded_size() as u64;
            if bytes >= opts.target_file_bytes || i + 1 == records.len() {
                outputs.push(self.inner.create_table(&records[start..=i])?);
                start = i + 1;
                bytes = 0;
            }
        }
        self.inner.install(&[], &[], level, outputs)
    }

    pub fn version(&self) -> Arc<Version> {
        Arc::clone(&self.inner.state.read().unwrap_or_else(|e| e.into_inner()).version)
    }

    /// The configuration the next table will be built with.
    pub fn current_build_config(&self) -> BuildConfig {
        lock(&self.inner.tuning).current()
    }

    pub fn agent(&self) -> Option<Agent> {
        lock(&self.inner.tuning).agent.clone()
    }

    pub fn decisions(&self) -> Vec<Decision> {
        lock(&self.inner.tuning).decisions.clone()
    }

    pub fn stats(&self) -> EngineStats {
        let version = self.version();
        let st = self.inner.state.read().unwrap_or_else(|e| e.into_inner());
        let tuning = lock(&self.inner.tuning);
        EngineStats {
            tables_created: st.manifest.tables_created,
            stats_forwarded: self.inner.stats_forwarded.load(Ordering::Relaxed),
            flushes: self.inner.flushes.load(Ordering::Relaxed),
            compactions: self.inner.compactions.load(Ordering::Relaxed),
            compaction_time_ns: self.inner.compaction_ns.load(Ordering::Relaxed),
            episodes: tuning.agent.as_ref().map_or(0, |a| a.episodes()),
            level_tables: version.levels.iter().map(|l| l.len()).collect(),
            level_bytes: (0..version.levels.len()).map(|l| version.level_bytes(l)).collect(),
            index_bytes: version.levels.iter().flatten().map(|t| t.stats().index_bytes).sum(),
        }
    }

    /// Waits for background work queued so far.
    pub fn wait_idle(&self) -> Result<()> {
        drop(lock(&self.inner.work));
        self.inner.flush_sealed()
    }
}

impl Drop for Db {
    fn drop(&mut self) {
        if let Some((tx, handle)) = self.worker.take() {
            let _ = tx.send(Job::Stop);
            let _ = handle.join();
        }
        let _ = self.inner.save_agent();
    }
}

impl Tuning {
    fn current(&self) -> BuildConfig {
        self.agent.as_ref().map_or(self.fixed, |a| a.build_config())
    }
}

impl Inner {
    fn level_target(&self, level: usize) -> u64 {
        let mut t = self.opts.base_level_bytes;
        for _ in 1..level {
            t = t.saturating_mul(self.opts.level_ratio);
        }
        t
    }

    fn seal(&self, st: &mut State, wal: &mut Wal) -> Result<()> {
        let id = st.next_wal_id;
        st.next_wal_id += 1;
        let sealed_path = self.opts.dir.join(format!("wal.{id}.log"));
        fs::rename(wal.path(), &sealed_path)?;
        *wal = Wal::open(&self.opts.dir.join(WAL_FILE), self.opts.sync_wal)?;
        let mem = std::mem::take(&mut st.mem);
        st.sealed.push(Arc::new(Sealed {
            mem,
            wal_path: sealed_path,
        }));
        Ok(())
    }

    fn lookup(&self, key: &[u8], probe: &mut ProbeStats, probed: &mut u32) -> Result<(Option<Vec<u8>>, Source)> {
        let version = {
            let st = self.state.read().unwrap_or_else(|e| e.into_inner());
            if let Some(v) = st.mem.map.get(key) {
                return Ok((v.clone(), Source::Memtable));
            }
            for s in st.sealed.iter().rev() {
                if let Some(v) = s.mem.map.get(key) {
                    return Ok((v.clone(), Source::Memtable));
                }
            }
            Arc::clone(&st.version)
        };
        for (level, tables) in version.levels.iter().enumerate() {
            let candidates: &[Arc<SSTableHandle>] = if level == 0 {
                tables
            } else {
                let i = tables.partition_point(|t| t.max_key() < key);
                match tables.get(i) {
                    Some(_) => &tables[i..i + 1],
                    None => &[],
                }
            };
            for t in candidates {
                if !t.covers(key) {
                    continue;
                }
                *probed += 1;
                match t.probe(key, probe)? {
                    Lookup::Value(v) => return Ok((Some(v), Source::Level(level as u32))),
                    Lookup::Tombstone => return Ok((None, Source::Level(level as u32))),
                    Lookup::Absent => {}
                }
            }
        }
        Ok((None, Source::Missing))
    }

    /// Writes one table with the current index configuration and reports it
    /// to the tuning path.
    fn create_table(&self, records: &[Record]) -> Result<Arc<SSTableHandle>> {
        let config = lock(&self.tuning).current();
        let id = {
            let mut st = self.state.write().unwrap_or_else(|e| e.into_inner());
            st.manifest.next_file_id += 1;
            st.manifest.next_file_id
        };
        let path = self.opts.dir.join(table_file_name(id));
        let table = match write_sstable(&path, records, &config, self.opts.index_kind) {
            Ok(t) => t,
            Err(e) => {
                let _ = fs::remove_file(&path);
                return Err(e);
            }
        };
        Ok(Arc::new(table))
    }

    /// Publishes a new version: drops `removed_upper` from `level − 1` (or
    /// from level 0 when `level` is 0), `removed_lower` from `level`, adds
    /// `added` to `level`, persists the manifest, then deletes dead files.
    fn install(
        &self,
        removed_upper: &[Arc<SSTableHandle>],
        removed_lower: &[Arc<SSTableHandle>],
        level: usize,
        added: Vec<Arc<SSTableHandle>>,
    ) -> Result<()> {
        let dead: Vec<PathBuf> = removed_upper.iter().chain(removed_lower).map(|t| t.path().to_path_buf()).collect();
        let created = added.len() as u64;
        let stats: Vec<_> = added.iter().map(|t| t.stats().clone()).collect();
        {
            let mut st = self.state.write().unwrap_or_else(|e| e.into_inner());
            let mut levels = st.version.levels.clone();
            let gone = |t: &Arc<SSTableHandle>| dead.iter().any(|p| p == t.path());
            for l in levels.iter_mut() {
                l.retain(|t| !gone(t));
            }
            if level == 0 {
                for t in added.into_iter().rev() {
                    levels[0].insert(0, t);
                }
            } else {
                levels[level].extend(added);
                levels[level].sort_by(|a, b| a.min_key().cmp(b.min_key()));
                debug_assert!(levels[level].windows(2).all(|w| w[0].max_key() < w[1].min_key()));
            }
            let mut manifest = st.manifest.clone();
            manifest.tables_created += created;
            manifest.next_wal_id = st.next_wal_id;
            manifest.levels = levels
                .iter()
                .map(|l| {
                    l.iter()
                        .map(|t| TableEntry {
                            id: table_id(t.path()),
                            min_key: hex::encode(t.min_key()),
                            max_key: hex::encode(t.max_key()),
                            records: t.record_count(),
                            file_bytes: t.file_size(),
                        })
                        .collect()
                })
                .collect();
            manifest.store(&self.opts.dir)?;
            st.manifest = manifest;
            st.version = Arc::new(Version { levels });
        }
        for p in dead {
            let _ = fs::remove_file(p);
        }
        for s in stats {
            self.forward_stats(s.index_bytes)?;
        }
        Ok(())
    }

    fn forward_stats(&self, index_bytes: u64) -> Result<()> {
        self.stats_forwarded.fetch_add(1, Ordering::Relaxed);
        let mut tuning = lock(&self.tuning);
        tuning.window_index_bytes += index_bytes;
        tuning.window_tables += 1;
        let Some(every) = tuning.agent.as_ref().map(|a| a.config().episode_every as u64) else {
            return Ok(());
        };
        if tuning.window_tables < every {
            return Ok(());
        }
        let mut sum = 0u64;
        let mut n = 0u64;
        while let Some(l) = self.latencies.pop() {
            sum += l;
            n += 1;
        }
        let avg_latency = if n == 0 { 0.0 } else { sum as f64 / n as f64 };
        let avg_index = tuning.window_index_bytes as f64 / tuning.window_tables as f64;
        tuning.window_index_bytes = 0;
        tuning.window_tables = 0;
        let agent = tuning.agent.as_mut().expect("checked above");
        let decision = agent.episode(avg_latency, avg_index);
        if decision.shift_detected {
            agent.prune(&measure_block_latencies(&self.opts.dir)?);
        }
        agent.save(&self.opts.dir.join(AGENT_FILE))?;
        tuning.decisions.push(decision);
        Ok(())
    }

    fn save_agent(&self) -> Result<()> {
        match &lock(&self.tuning).agent {
            Some(a) => a.save(&self.opts.dir.join(AGENT_FILE)),
            None => Ok(()),
        }
    }

    /// Writes every sealed memtable to level 0, then compacts.
    fn flush_sealed(&self) -> Result<()> {
        let _work = lock(&self.work);
        loop {
            let next = {
                let st = self.state.read().unwrap_or_else(|e| e.into_inner());
                st.sealed.first().cloned()
            };
            let Some(sealed) = next else { break };
            if !sealed.mem.map.is_empty() {
                let table = self.create_table(&sealed.mem.records())?;
                self.install(&[], &[], 0, vec![table])?;
            }
            {
                let mut st = self.state.write().unwrap_or_else(|e| e.into_inner());
                st.sealed.remove(0);
            }
            fs::remove_file(&sealed.wal_path)?;
            self.flushes.fetch_add(1, Ordering::Relaxed);
        }
        self.compact()
    }

    fn compact(&self) -> Result<()> {
        loop {
            let version = Arc::clone(&self.state.read().unwrap_or_else(|e| e.into_inner()).version);
            let last = version.levels.len() - 1;
            if version.levels[0].len() >= self.opts.l0_trigger {
                let upper = version.levels[0].clone();
                self.merge_into(&version, upper, 1)?;
                continue;
            }
            let over = (1..last).find(|&l| version.level_bytes(l) > self.level_target(l));
            let Some(level) = over else { break };
            let pick = {
                let mut cursor = lock(&self.compact_cursor);
                let tables = &version.levels[level];
                let t = tables
                    .iter()
                    .find(|t| t.min_key() > cursor[level].as_slice())
                    .unwrap_or(&tables[0])
                    .clone();
                cursor[level] = t.max_key().to_vec();
                t
            };
            self.merge_into(&version, vec![pick], level + 1)?;
        }
        Ok(())
    }

    /// Merges `upper` with the overlapping tables of `target` into fresh
    /// tables on `target`.
    fn merge_into(&self, version: &Version, upper: Vec<Arc<SSTableHandle>>, target: usize) -> Result<()> {
        let started = Instant::now();
        let lo = upper.iter().map(|t| t.min_key()).min().unwrap().to_vec();
        let hi = upper.iter().map(|t| t.max_key()).max().unwrap().to_vec();
        let lower: Vec<Arc<SSTableHandle>> = version.levels[target]
            .iter()
            .filter(|t| t.min_key() <= hi.as_slice() && t.max_key() >= lo.as_slice())
            .cloned()
            .collect();
        let bottom = version.levels[target + 1..].iter().all(|l| l.is_empty());

        // Upper tables rank before lower ones; level 0 is already newest first.
        let mut sources: Vec<MergeSource<'static>> = Vec::new();
        for t in upper.iter().chain(&lower) {
            sources.push(Box::new(TableIter::all(Arc::clone(t))));
        }
        let mut outputs = Vec::new();
        let result = (|| -> Result<()> {
            let mut chunk = Vec::new();
            let mut bytes = 0u64;
            for r in MergeIter::new(sources)? {
                let r = r?;
                if bottom && r.tombstone {
                    continue;
                }
                bytes += r.encoded_size() as u64;
                chunk.push(r);
                if bytes >= self.opts.target_file_bytes {
                    outputs.push(self.create_table(&chunk)?);
                    chunk.clear();
                    bytes = 0;
                }
            }
            if !chunk.is_empty() {
                outputs.push(self.create_table(&chunk)?);
            }
            Ok(())
        })();
        if let Err(e) = result {
            // Nothing was published; drop the partial output.
            for t in &outputs {
                let _ = fs::remove_file(t.path());
            }
            return Err(e);
        }
        self.install(&upper, &lower, target, outputs)?;
        self.compactions.fetch_add(1, Ordering::Relaxed);
        self.compaction_ns.fetch_add(started.elapsed().as_nanos() as u64, Ordering::Relaxed);
        Ok(())
    }
}

fn table_id(path: &Path) -> u64 {
    path.file_stem()
        .and_then(|s| s.to_str())
        .and_then(|s| s.parse().ok())
        .expect("tables are named by id")
}

/// Times reads of each candidate block size from a scratch file in `dir`,
/// for pruning the agent's block axis.
pub fn measure_block_latencies(dir: &Path) -> Result<Vec<(u64, f64)>> {
    use std::io::{Read, Seek, SeekFrom, Write};
    const ROUNDS: usize = 32;
    let largest = *BuildConfig::BLOCK_CHOICES.last().unwrap() as usize;
    let path = dir.join("block-probe.tmp");
    let data: Vec<u8> = (0..largest * 8).map(|i| (i * 131 % 251) as u8).collect();
    fs::File::create(&path)?.write_all(&data)?;
    let mut f = fs::File::open(&path)?;
    let mut samples = Vec::new();
    let mut buf = vec![0u8; largest];
    for &size in &BuildConfig::BLOCK_CHOICES {
        let started = Instant::now();
        for i in 0..ROUNDS {
            f.seek(SeekFrom::Start(((i % 8) * largest) as u64))?;
            f.read_exact(&mut buf[..size as usize])?;
        }
        samples.push((size, started.elapsed().as_nanos() as f64 / ROUNDS as f64));
    }
    drop(f);
    fs::remove_file(&path)?;
    Ok(samples)
}
