//! Dataset generation, workload execution and report emission.

mod dataset;
mod workload;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::agent::AgentConfig;
use crate::engine::{Db, MetricsSummary, Options, QueryMetrics, Source};
use crate::error::Result;
use crate::model::BuildConfig;
use crate::sstable::IndexKind;

pub use dataset::{generate_dataset, Dataset, DatasetKind, DatasetSpec, KvProfile};
pub use workload::{plan, Mix, Op, Plan, RequestDist, ScrambledZipf, WorkloadSpec, SCAN_WINDOW, ZIPF_EXPONENT};

pub const INSERT_POLICY: &str = "inserts use fresh keys held out from a seeded shuffle of the dataset";

#[derive(Debug, Clone)]
pub struct RunConfig {
    /// The store lives in `<dir>/db-<system>`, recreated per run.
    pub dir: PathBuf,
    pub index_kind: IndexKind,
    pub build_config: BuildConfig,
    /// `None` freezes `build_config`.
    pub agent: Option<AgentConfig>,
    pub threads: usize,
    pub memtable_bytes: usize,
    pub keep_db: bool,
}

impl RunConfig {
    pub fn new(dir: impl Into<PathBuf>, index_kind: IndexKind) -> Self {
        RunConfig {
            dir: dir.into(),
            index_kind,
            build_config: BuildConfig::default(),
            agent: Some(AgentConfig::default()),
            threads: 1,
            memtable_bytes: 8 << 20,
            keep_db: false,
        }
    }

    pub fn system(&self) -> &'static str {
        match self.index_kind {
            IndexKind::Learned => "learned",
            IndexKind::FixedBinary => "fixed_binary",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OpKind {
    Get,
    Scan,
    Put,
}

impl OpKind {
    fn label(self) -> &'static str {
        match self {
            OpKind::Get => "get",
            OpKind::Scan => "scan",
            OpKind::Put => "put",
        }
    }
}

/// One executed op. Ops of a run are logged in stream order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpRecord {
    pub seq: u64,
    pub kind: OpKind,
    pub thread: u32,
    /// Completion time since the run started.
    pub end_ns: u64,
    /// Gets: key found. Scans: number of pairs returned.
    pub result: u64,
    pub metrics: QueryMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub dataset: String,
    pub workload: String,
    pub system: String,
    pub keys: u64,
    pub preloaded: u64,
    pub ops: u64,
    pub seed: u64,
    pub insert_policy: String,
    pub wall_time_ns: u64,
    pub throughput_ops_s: f64,
    /// Point reads only; scans and writes count toward throughput.
    pub reads: MetricsSummary,
    pub index_bytes_total: u64,
    pub tables_created: u64,
    pub compactions: u64,
    pub compaction_time_mean_ns: f64,
    /// Agent state after each episode.
    pub agent_trajectory: Vec<String>,
}

pub struct RunOutput {
    pub report: RunReport,
    pub log: Vec<OpRecord>,
}

/// Loads the plan's preload into a fresh store, runs its ops and measures them.
pub fn run_workload(cfg: &RunConfig, dataset: &Dataset, workload: &WorkloadSpec) -> Result<RunOutput> {
    let p = plan(&dataset.records, workload)?;
    let db_dir = cfg.dir.join(format!("db-{}", cfg.system()));
    if db_dir.exists() {
        fs::remove_dir_all(&db_dir)?;
    }
    let mut opts = Options::new(&db_dir);
    opts.index_kind = cfg.index_kind;
    opts.build_config = cfg.build_config;
    opts.agent = cfg.agent;
    opts.memtable_bytes = cfg.memtable_bytes;
    let db = Arc::new(Db::open(opts)?);
    db.bulk_load(&p.preload)?;

    let threads = cfg.threads.max(1);
    let ops = Arc::new(p.ops);
    let started = Instant::now();
    let mut handles = Vec::with_capacity(threads);
    for t in 0..threads {
        let db = Arc::clone(&db);
        let ops = Arc::clone(&ops);
        handles.push(std::thread::spawn(move || -> Result<Vec<OpRecord>> {
            let mut log = Vec::new();
            for seq in (t..ops.len()).step_by(threads) {
                log.push(execute(&db, &ops[seq], seq as u64, t as u32, started)?);
            }
            Ok(log)
        }));
    }
    let mut log = Vec::with_capacity(ops.len());
    for h in handles {
        log.extend(h.join().expect("client thread panicked")?);
    }
    log.sort_by_key(|r| r.seq);
    db.flush()?;

    let stats = db.stats();
    let trajectory = db.decisions().iter().map(|d| d.state.label()).collect();
    let mut report = summarize(&log);
    report.dataset = dataset.name.clone();
    report.workload = format!("{}{}", workload.mix.label(), if workload.scan { "+scan" } else { "" });
    report.system = cfg.system().into();
    report.keys = dataset.len() as u64;
    report.preloaded = p.preload.len() as u64;
    report.seed = workload.seed;
    report.index_bytes_total = stats.index_bytes;
    report.tables_created = stats.tables_created;
    report.compactions = stats.compactions;
    report.compaction_time_mean_ns = if stats.compactions == 0 {
        0.0
    } else {
        stats.compaction_time_ns as f64 / stats.compactions as f64
    };
    report.agent_trajectory = trajectory;
    drop(db);
    if !cfg.keep_db {
        fs::remove_dir_all(&db_dir)?;
    }
    Ok(RunOutput { report, log })
}

fn execute(db: &Db, op: &Op, seq: u64, thread: u32, started: Instant) -> Result<OpRecord> {
    let (kind, result, metrics) = match op {
        Op::Get(k) => {
            let (v, m) = db.get_with_metrics(k)?;
            (OpKind::Get, u64::from(v.is_some()), m)
        }
        Op::Scan(k) => {
            let t = Instant::now();
            let n = db.scan_from(k, SCAN_WINDOW)?.len() as u64;
            (OpKind::Scan, n, bare(t))
        }
        Op::Put(r) => {
            let t = Instant::now();
            db.put(&r.key, &r.value)?;
            (OpKind::Put, 0, bare(t))
        }
    };
    Ok(OpRecord {
        seq,
        kind,
        thread,
        end_ns: started.elapsed().as_nanos() as u64,
        result,
        metrics,
    })
}

fn bare(t: Instant) -> QueryMetrics {
    QueryMetrics {
        latency_ns: t.elapsed().as_nanos() as u64,
        blocks_read: 0,
        bytes_read: 0,
        key_comparisons: 0,
        bytes_compared: 0,
        tables_probed: 0,
        source: Source::Missing,
    }
}

/// The log-derived part of a report.
pub fn summarize(log: &[OpRecord]) -> RunReport {
    let wall = log.iter().map(|r| r.end_ns).max().unwrap_or(0);
    let gets: Vec<QueryMetrics> = log.iter().filter(|r| r.kind == OpKind::Get).map(|r| r.metrics).collect();
    RunReport {
        dataset: String::new(),
        workload: String::new(),
        system: String::new(),
        keys: 0,
        preloaded: 0,
        ops: log.len() as u64,
        seed: 0,
        insert_policy: INSERT_POLICY.into(),
        wall_time_ns: wall,
        throughput_ops_s: if wall == 0 { 0.0 } else { log.len() as f64 * 1e9 / wall as f64 },
        reads: MetricsSummary::from_log(&gets),
        index_bytes_total: 0,
        tables_created: 0,
        compactions: 0,
        compaction_time_mean_ns: 0.0,
        agent_trajectory: Vec::new(),
    }
}

pub const SUMMARY_COLUMNS: [&str; 21] = [
    "dataset",
    "workload",
    "system",
    "keys",
    "preloaded",
    "ops",
    "seed",
    "wall_time_ns",
    "throughput_ops_s",
    "reads",
    "mean_latency_ns",
    "p99_latency_ns",
    "tail5_mean_latency_ns",
    "mean_blocks_read",
    "mean_blocks_per_table",
    "mean_bytes_read",
    "mean_key_comparisons",
    "mean_bytes_compared",
    "index_bytes_total",
    "compaction_time_mean_ns",
    "speedup",
];

/// One row per report. `speedup` is the throughput ratio against the
/// `fixed_binary` row of the same dataset and workload, empty when absent.
pub fn summary_csv(reports: &[RunReport]) -> String {
    let mut out = SUMMARY_COLUMNS.join(",");
    out.push('\n');
    for r in reports {
        let base = reports
            .iter()
            .find(|b| b.system == "fixed_binary" && b.dataset == r.dataset && b.workload == r.workload);
        let speedup = match base {
            Some(b) if b.throughput_ops_s > 0.0 => format!("{:.6}", r.throughput_ops_s / b.throughput_ops_s),
            _ => String::new(),
        };
        let s = &r.reads;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{:.3},{},{:.3},{},{:.3},{:.6},{:.6},{:.3},{:.3},{:.3},{},{:.3},{}",
            csv_field(&r.dataset),
            r.workload,
            r.system,
            r.keys,
            r.preloaded,
            r.ops,
            r.seed,
            r.wall_time_ns,
            r.throughput_ops_s,
            s.count,
            s.mean_latency_ns,
            s.p99_latency_ns,
            s.tail5_mean_latency_ns,
            s.mean_blocks_read,
            s.mean_blocks_per_table,
            s.mean_bytes_read,
            s.mean_key_comparisons,
            s.mean_bytes_compared,
            r.index_bytes_total,
            r.compaction_time_mean_ns,
            speedup
        );
    }
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn ops_csv(runs: &[(&str, &[OpRecord])]) -> String {
    let mut out = String::from(
        "system,seq,op,thread,end_ns,result,latency_ns,blocks_read,bytes_read,key_comparisons,bytes_compared,tables_probed,source\n",
    );
    for (system, log) in runs {
        for r in *log {
            let m = &r.metrics;
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{}",
                system,
                r.seq,
                r.kind.label(),
                r.thread,
                r.end_ns,
                r.result,
                m.latency_ns,
                m.blocks_read,
                m.bytes_read,
                m.key_comparisons,
                m.bytes_compared,
                m.tables_probed,
                m.source.label()
            );
        }
    }
    out
}

/// Writes `report.json`, `ops.csv` and `summary.csv` into `out`.
pub fn emit_report(out: &Path, runs: &[RunOutput]) -> Result<()> {
    fs::create_dir_all(out)?;
    let reports: Vec<RunReport> = runs.iter().map(|r| r.report.clone()).collect();
    fs::write(out.join("report.json"), serde_json::to_vec_pretty(&reports)?)?;
    fs::write(out.join("summary.csv"), summary_csv(&reports))?;
    let logs: Vec<(&str, &[OpRecord])> = runs.iter().map(|r| (r.report.system.as_str(), r.log.as_slice())).collect();
    fs::write(out.join("ops.csv"), ops_csv(&logs))?;
    Ok(())
}
