// SPDX-License-Identifier: Apache-2.0

//! CSV run records, parameter sweeps and cross-run comparison.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{apply, ConfigError, Setting};
use crate::engine::{run, MetricsReport};
use crate::model::SimConfig;

/// CSV columns, in order.
pub const RUN_RECORD_COLUMNS: [&str; 17] = [
    "scheme",
    "width",
    "height",
    "vc_count",
    "packet_len",
    "vb",
    "shared_size",
    "fault_rate",
    "seed",
    "injection_rate",
    "avg_latency",
    "throughput",
    "buffer_usage_rate",
    "dropped_packets",
    "purged_flits",
    "shift_ops_total",
    "saturated",
];

/// Keys a sweep may vary, in expansion order.
pub const SWEEP_KEYS: [&str; 6] = ["scheme", "injection_rate", "fault_rate", "shared_size", "vb", "seed"];

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("{path}: columns do not match the run record schema")]
    SchemaMismatch { path: PathBuf },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("no rows to compare")]
    Empty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub scheme: String,
    pub width: usize,
    pub height: usize,
    pub vc_count: usize,
    pub packet_len: usize,
    pub vb: usize,
    pub shared_size: usize,
    pub fault_rate: f64,
    pub seed: u64,
    pub injection_rate: f64,
    pub avg_latency: f64,
    pub throughput: f64,
    pub buffer_usage_rate: f64,
    pub dropped_packets: u64,
    pub purged_flits: u64,
    pub shift_ops_total: u64,
    pub saturated: bool,
}

impl RunRecord {
    pub fn new(cfg: &SimConfig, m: &MetricsReport) -> Self {
        RunRecord {
            scheme: cfg.scheme.name().to_string(),
            width: cfg.width,
            height: cfg.height,
            vc_count: cfg.vc_count,
            packet_len: cfg.packet_len,
            vb: cfg.vb,
            shared_size: cfg.shared_size,
            fault_rate: cfg.fault_rate,
            seed: cfg.seed,
            injection_rate: cfg.injection_rate,
            avg_latency: m.avg_latency,
            throughput: m.throughput,
            buffer_usage_rate: m.buffer_usage_rate,
            dropped_packets: m.dropped_packets,
            purged_flits: m.purged_flits,
            shift_ops_total: m.shift_ops_total,
            saturated: m.saturated,
        }
    }
}

pub fn write_records<W: Write>(out: W, records: &[RunRecord], header: bool) -> Result<(), ReportError> {
    let mut w = csv::WriterBuilder::new().has_headers(header).from_writer(out);
    if header && records.is_empty() {
        w.write_record(RUN_RECORD_COLUMNS)?;
    }
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn records_to_csv(records: &[RunRecord]) -> String {
    let mut buf = Vec::new();
    write_records(&mut buf, records, true).expect("writing to memory");
    String::from_utf8(buf).expect("csv output is utf-8")
}

pub fn read_records<R: Read>(input: R, path: &Path) -> Result<Vec<RunRecord>, ReportError> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.clone();
    if !header.iter().eq(RUN_RECORD_COLUMNS) {
        return Err(ReportError::SchemaMismatch { path: path.to_path_buf() });
    }
    r.deserialize()
        .map(|row| row.map_err(ReportError::from))
        .collect()
}

pub fn load_records(path: &Path) -> Result<Vec<RunRecord>, ReportError> {
    read_records(std::fs::File::open(path)?, path)
}

pub fn cmd_run(cfg: &SimConfig) -> Result<RunRecord, crate::engine::EngineError> {
    Ok(RunRecord::new(cfg, &run(cfg)?))
}

/// Value lists for the sweepable keys; an empty list keeps the template value.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SweepSpec {
    pub lists: BTreeMap<&'static str, Vec<String>>,
}

impl SweepSpec {
    /// Registers the comma-separated `values` for `key`. Non-sweep keys must
    /// carry a single value and are returned as plain overrides.
    pub fn add(&mut self, key: &str, values: &str) -> Result<Option<Setting>, ConfigError> {
        match SWEEP_KEYS.iter().find(|k| **k == key) {
            Some(k) => {
                let list: Vec<String> = values.split(',').map(|v| v.trim().to_string()).collect();
                if list.iter().any(|v| v.is_empty()) {
                    return Err(ConfigError::TypeError {
                        key: key.to_string(),
                        value: values.to_string(),
                    });
                }
                self.lists.insert(k, list);
                Ok(None)
            }
            None => Ok(Some(Setting::new(key, values))),
        }
    }

    /// Cartesian product over the lists, lexicographic in [`SWEEP_KEYS`]
    /// order with the last key varying fastest.
    pub fn expand(&self, template: &SimConfig) -> Result<Vec<SimConfig>, ConfigError> {
        let mut out = vec![template.clone()];
        for key in SWEEP_KEYS {
            let Some(values) = self.lists.get(key) else { continue };
            let mut next = Vec::with_capacity(out.len() * values.len());
            for base in &out {
                for v in values {
                    let mut c = base.clone();
                    apply(&mut c, &Setting::new(key, v.clone()))?;
                    next.push(c);
                }
            }
            out = next;
        }
        for c in &out {
            c.validate()?;
        }
        Ok(out)
    }
}

/// Runs every config on a pool of `jobs` threads (0 means one per CPU).
/// Results come back in input order whatever the pool size.
pub fn cmd_sweep(configs: &[SimConfig], jobs: usize) -> Vec<Result<RunRecord, String>> {
    let work = || {
        configs
            .par_iter()
            .map(|c| cmd_run(c).map_err(|e| e.to_string()))
            .collect()
    };
    match rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
        Ok(pool) => pool.install(work),
        Err(_) => work(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    AvgLatency,
    Throughput,
    BufferUsageRate,
    DroppedPackets,
    PurgedFlits,
    ShiftOpsTotal,
}

impl Metric {
    pub fn of(self, r: &RunRecord) -> f64 {
        match self {
            Metric::AvgLatency => r.avg_latency,
            Metric::Throughput => r.throughput,
            Metric::BufferUsageRate => r.buffer_usage_rate,
            Metric::DroppedPackets => r.dropped_packets as f64,
            Metric::PurgedFlits => r.purged_flits as f64,
            Metric::ShiftOpsTotal => r.shift_ops_total as f64,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Metric::AvgLatency => "avg_latency",
            Metric::Throughput => "throughput",
            Metric::BufferUsageRate => "buffer_usage_rate",
            Metric::DroppedPackets => "dropped_packets",
            Metric::PurgedFlits => "purged_flits",
            Metric::ShiftOpsTotal => "shift_ops_total",
        }
    }
}

impl FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "avg_latency" => Metric::AvgLatency,
            "throughput" => Metric::Throughput,
            "buffer_usage_rate" => Metric::BufferUsageRate,
            "dropped_packets" => Metric::DroppedPackets,
            "purged_flits" => Metric::PurgedFlits,
            "shift_ops_total" => Metric::ShiftOpsTotal,
            _ => return Err(format!("unknown metric {s:?}")),
        })
    }
}

/// A record column usable as a group key or series axis. `File` is the
/// input file a row came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Field {
    Scheme,
    Width,
    Height,
    VcCount,
    PacketLen,
    Vb,
    SharedSize,
    FaultRate,
    Seed,
    InjectionRate,
    File,
}

impl Field {
    fn label(self, r: &RunRecord, file: &str) -> String {
        match self {
            Field::Scheme => r.scheme.clone(),
            Field::Width => r.width.to_string(),
            Field::Height => r.height.to_string(),
            Field::VcCount => r.vc_count.to_string(),
            Field::PacketLen => r.packet_len.to_string(),
            Field::Vb => r.vb.to_string(),
            Field::SharedSize => r.shared_size.to_string(),
            Field::FaultRate => r.fault_rate.to_string(),
            Field::Seed => r.seed.to_string(),
            Field::InjectionRate => r.injection_rate.to_string(),
            Field::File => file.to_string(),
        }
    }

    fn numeric(self, r: &RunRecord) -> f64 {
        match self {
            Field::Width => r.width as f64,
            Field::Height => r.height as f64,
            Field::VcCount => r.vc_count as f64,
            Field::PacketLen => r.packet_len as f64,
            Field::Vb => r.vb as f64,
            Field::SharedSize => r.shared_size as f64,
            Field::FaultRate => r.fault_rate,
            Field::Seed => r.seed as f64,
            Field::InjectionRate => r.injection_rate,
            Field::Scheme | Field::File => f64::NAN,
        }
    }
}

impl FromStr for Field {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "scheme" => Field::Scheme,
            "width" => Field::Width,
            "height" => Field::Height,
            "vc_count" => Field::VcCount,
            "packet_len" => Field::PacketLen,
            "vb" => Field::Vb,
            "shared_size" => Field::SharedSize,
            "fault_rate" => Field::FaultRate,
            "seed" => Field::Seed,
            "injection_rate" => Field::InjectionRate,
            "file" => Field::File,
            _ => return Err(format!("unknown field {s:?}")),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupSummary {
    pub key: String,
    pub rows: usize,
    /// Mean of the metric over all rows of the group.
    pub mean: f64,
    /// Largest seed-averaged value along the series axis.
    pub max: f64,
    /// `(x, mean over seeds)` in ascending `x`.
    pub series: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub metric: Metric,
    pub groups: Vec<GroupSummary>,
    /// `(a, b, mean_a / mean_b)` for every ordered pair of distinct groups.
    pub ratios: Vec<(String, String, f64)>,
}

/// Groups `rows` (each tagged with its source file) by `group_by`, averaging
/// over seeds at each value of `x`.
pub fn compare(rows: &[(String, RunRecord)], metric: Metric, group_by: Field, x: Field) -> Result<Comparison, ReportError> {
    if rows.is_empty() {
        return Err(ReportError::Empty);
    }
    let mut order: Vec<String> = Vec::new();
    let mut groups: BTreeMap<String, Vec<&(String, RunRecord)>> = BTreeMap::new();
    for row in rows {
        let key = group_by.label(&row.1, &row.0);
        if !groups.contains_key(&key) {
            order.push(key.clone());
        }
        groups.entry(key).or_default().push(row);
    }
    let summaries: Vec<GroupSummary> = order
        .iter()
        .map(|key| {
            let members = &groups[key];
            let mean = members.iter().map(|r| metric.of(&r.1)).sum::<f64>() / members.len() as f64;
            let mut at_x: Vec<(f64, Vec<f64>)> = Vec::new();
            for (_, r) in members.iter().map(|r| (&r.0, &r.1)) {
                let xv = x.numeric(r);
                match at_x.iter_mut().find(|(v, _)| v.total_cmp(&xv).is_eq()) {
                    Some((_, ys)) => ys.push(metric.of(r)),
                    None => at_x.push((xv, vec![metric.of(r)])),
                }
            }
            at_x.sort_by(|a, b| a.0.total_cmp(&b.0));
            let series: Vec<(f64, f64)> = at_x
                .into_iter()
                .map(|(xv, ys)| (xv, ys.iter().sum::<f64>() / ys.len() as f64))
                .collect();
            let max = series.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
            GroupSummary {
                key: key.clone(),
                rows: members.len(),
                mean,
                max,
                series,
            }
        })
        .collect();
    let mut ratios = Vec::new();
    for a in &summaries {
        for b in &summaries {
            if a.key != b.key {
                ratios.push((a.key.clone(), b.key.clone(), a.mean / b.mean));
            }
        }
    }
    Ok(Comparison {
        metric,
        groups: summaries,
        ratios,
    })
}

impl fmt::Display for Comparison {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let m = self.metric.name();
        writeln!(f, "# group rows mean_{m} max_{m}")?;
        for g in &self.groups {
            writeln!(f, "{} {} {:.6} {:.6}", g.key, g.rows, g.mean, g.max)?;
        }
        writeln!(f)?;
        writeln!(f, "# ratio mean_{m}")?;
        for (a, b, r) in &self.ratios {
            writeln!(f, "{a}/{b} {r:.6}")?;
        }
        for g in &self.groups {
            let mut block = String::new();
            writeln!(block, "\n\n# series {}", g.key)?;
            for (x, y) in &g.series {
                writeln!(block, "{x} {y}")?;
            }
            f.write_str(&block)?;
        }
        Ok(())
    }
}
