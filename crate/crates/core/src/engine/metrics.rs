use serde::{Deserialize, Serialize};

use crate::sstable::ProbeStats;

/// Where a lookup was answered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Source {
    Memtable,
    Level(u32),
    /// No version of the key exists anywhere.
    Missing,
}

impl Source {
    pub fn label(&self) -> String {
        match self {
            Source::Memtable => "mem".into(),
            Source::Level(l) => format!("L{l}"),
            Source::Missing => "-".into(),
        }
    }
}

/// One lookup's cost.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QueryMetrics {
    pub latency_ns: u64,
    pub blocks_read: u64,
    pub bytes_read: u64,
    pub key_comparisons: u64,
    pub bytes_compared: u64,
    /// Tables whose key range covered the key.
    pub tables_probed: u32,
    pub source: Source,
}

impl QueryMetrics {
    pub(crate) fn new(probe: &ProbeStats, tables_probed: u32, source: Source, latency_ns: u64) -> Self {
        QueryMetrics {
            latency_ns,
            blocks_read: probe.blocks_read,
            bytes_read: probe.bytes_read,
            key_comparisons: probe.key_comparisons,
            bytes_compared: probe.bytes_compared,
            tables_probed,
            source,
        }
    }
}

/// Aggregates over a metrics log; recomputable from the log alone.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub count: u64,
    pub mean_latency_ns: f64,
    pub p99_latency_ns: u64,
    /// Mean latency of the slowest 5% of lookups.
    pub tail5_mean_latency_ns: f64,
    pub mean_blocks_read: f64,
    /// Mean data blocks read per table actually probed.
    pub mean_blocks_per_table: f64,
    pub mean_bytes_read: f64,
    pub mean_key_comparisons: f64,
    pub mean_bytes_compared: f64,
}

impl MetricsSummary {
    pub fn from_log(log: &[QueryMetrics]) -> Self {
        if log.is_empty() {
            return MetricsSummary::default();
        }
        let n = log.len() as f64;
        let mean = |f: fn(&QueryMetrics) -> u64| log.iter().map(|m| f(m) as f64).sum::<f64>() / n;
        let mut lat: Vec<u64> = log.iter().map(|m| m.latency_ns).collect();
        lat.sort_unstable();
        let p99 = lat[((0.99 * n).ceil() as usize).clamp(1, lat.len()) - 1];
        let tail = ((0.05 * n).ceil() as usize).max(1);
        let tail5 = lat[lat.len() - tail..].iter().map(|&v| v as f64).sum::<f64>() / tail as f64;
        let probed: u64 = log.iter().map(|m| m.tables_probed as u64).sum();
        let blocks: u64 = log.iter().map(|m| m.blocks_read).sum();
        MetricsSummary {
            count: log.len() as u64,
            mean_latency_ns: mean(|m| m.latency_ns),
            p99_latency_ns: p99,
            tail5_mean_latency_ns: tail5,
            mean_blocks_read: mean(|m| m.blocks_read),
            mean_blocks_per_table: if probed == 0 { 0.0 } else { blocks as f64 / probed as f64 },
            mean_bytes_read: mean(|m| m.bytes_read),
            mean_key_comparisons: mean(|m| m.key_comparisons),
            mean_bytes_compared: mean(|m| m.bytes_compared),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn percentile_and_tail() {
        let log: Vec<QueryMetrics> = (1..=100)
            .map(|i| QueryMetrics {
                latency_ns: i,
                blocks_read: 1,
                bytes_read: 10,
                key_comparisons: 2,
                bytes_compared: 16,
                tables_probed: 1,
                source: Source::Level(1),
            })
            .collect();
        let s = MetricsSummary::from_log(&log);
        assert_eq!(s.p99_latency_ns, 99);
        assert_eq!(s.tail5_mean_latency_ns, 98.0);
        assert_eq!(s.mean_latency_ns, 50.5);
        assert_eq!(s.mean_blocks_per_table, 1.0);
        assert_eq!(MetricsSummary::from_log(&[]).count, 0);
    }
}
