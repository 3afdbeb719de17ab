use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use doblix::agent::{Agent, AgentConfig};
use doblix::bench::{emit_report, generate_dataset, run_workload, DatasetSpec, Mix, RequestDist, RunConfig, WorkloadSpec};
use doblix::engine::{Options, DATA_DIR_ENV};
use doblix::sstable::{inspect, IndexKind};

#[derive(Parser)]
#[command(name = "doblix", version, about = "LSM key-value store with a block-aligned learned index")]
struct Cli {
    /// Data directory; defaults to $DOBLIX_DIR, then ./doblix-data.
    #[arg(long, global = true)]
    dir: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// SSTable tools.
    Sst {
        #[command(subcommand)]
        cmd: SstCmd,
    },
    /// Tuning agent tools.
    Agent {
        #[command(subcommand)]
        cmd: AgentCmd,
    },
    /// Run a workload on a generated dataset and write report.json, ops.csv and summary.csv.
    Bench(BenchArgs),
}

#[derive(Subcommand)]
enum SstCmd {
    /// Print footer, stats, block map and model summary as JSON.
    Inspect { file: PathBuf },
}

#[derive(Subcommand)]
enum AgentCmd {
    /// Print the Q-table as CSV.
    Dump,
}

#[derive(clap::Args)]
struct BenchArgs {
    /// logn, uni, udb, zippydb, up2x or file:<path>.
    #[arg(long)]
    dataset: String,
    /// ro, rh, bal or wo.
    #[arg(long)]
    workload: String,
    #[arg(long, default_value_t = 100_000)]
    ops: usize,
    #[arg(long, default_value_t = 1_000_000)]
    keys: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also run the fixed-block binary-search index.
    #[arg(long)]
    baseline: bool,
    /// Weight of index size against latency in the agent's reward.
    #[arg(long)]
    nu: Option<f64>,
    /// Reads become 100-pair forward scans.
    #[arg(long)]
    scan: bool,
    /// Uniform instead of Zipfian requests.
    #[arg(long)]
    uniform: bool,
    /// Freeze the index configuration.
    #[arg(long)]
    no_agent: bool,
    #[arg(long, default_value_t = 1)]
    threads: usize,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("doblix: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<(), Box<dyn std::error::Error>> {
    let dir = cli.dir.unwrap_or_else(|| Options::from_env().dir);
    match cli.cmd {
        Cmd::Sst {
            cmd: SstCmd::Inspect { file },
        } => {
            println!("{}", serde_json::to_string_pretty(&inspect(&file)?)?);
        }
        Cmd::Agent { cmd: AgentCmd::Dump } => {
            let path = dir.join("agent.json");
            if !path.exists() {
                return Err(format!("no agent state at {} (set --dir or {DATA_DIR_ENV})", path.display()).into());
            }
            print!("{}", Agent::load(&path)?.q_table_csv());
        }
        Cmd::Bench(a) => bench(a)?,
    }
    Ok(())
}

fn bench(a: BenchArgs) -> Result<(), Box<dyn std::error::Error>> {
    let dataset = generate_dataset(&DatasetSpec::parse(&a.dataset, a.keys, a.seed)?)?;
    let mut workload = WorkloadSpec::new(Mix::parse(&a.workload)?, a.ops, a.seed);
    workload.scan = a.scan;
    if a.uniform {
        workload.request_dist = RequestDist::Uniform;
    }
    let mut kinds = vec![IndexKind::Learned];
    if a.baseline {
        kinds.push(IndexKind::FixedBinary);
    }
    let mut runs = Vec::new();
    for kind in kinds {
        let mut cfg = RunConfig::new(&a.out, kind);
        cfg.threads = a.threads;
        cfg.agent = if a.no_agent {
            None
        } else {
            let mut ac = AgentConfig::default();
            if let Some(nu) = a.nu {
                ac.nu = nu;
            }
            Some(ac)
        };
        let out = run_workload(&cfg, &dataset, &workload)?;
        let r = &out.report;
        eprintln!(
            "{} {} {}: {:.0} ops/s, p99 {} ns, {:.3} blocks/get, index {} B",
            r.dataset, r.workload, r.system, r.throughput_ops_s, r.reads.p99_latency_ns, r.reads.mean_blocks_read, r.index_bytes_total
        );
        runs.push(out);
    }
    emit_report(&a.out, &runs)?;
    Ok(())
}
