//! The X sweep: one run per ORAM-read percentage over the same loaded
//! state and workload, charged under each network profile.
//!
//! A run records the verbs and bytes of every operation, so one execution
//! prices every profile exactly as if it had been run under it.

use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::client::{ClientMetrics, Route};
use crate::config::{Backend, Config};
use crate::error::{Error, Result};
use crate::session::{OpResult, Session};
use crate::transport::{NetProfile, Transport};
use crate::workload::{self, Op};

/// One sweep point. Column order of the CSV follows field order.
///
/// `onesided_read_count` counts every read that skipped the ORAM protocol:
/// one-sided slot reads, plus stash hits and absent keys, which cost nothing
/// remote. So `oram_read_count + onesided_read_count` is the read count.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub x_percent: f64,
    pub net_profile: String,
    pub ops: u64,
    pub virtual_time_us: f64,
    pub throughput_ops_s: f64,
    pub mean_read_us: f64,
    pub p50_read_us: f64,
    pub p99_read_us: f64,
    pub oram_read_count: u64,
    pub onesided_read_count: u64,
    pub max_stash: usize,
    pub speedup_vs_x100: f64,
}

pub const CSV_COLUMNS: [&str; 12] = [
    "x_percent",
    "net_profile",
    "ops",
    "virtual_time_us",
    "throughput_ops_s",
    "mean_read_us",
    "p50_read_us",
    "p99_read_us",
    "oram_read_count",
    "onesided_read_count",
    "max_stash",
    "speedup_vs_x100",
];

/// Remote cost of one operation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OpCost {
    pub verbs: u64,
    pub bytes: u64,
    pub is_read: bool,
}

/// One run at a fixed X.
#[derive(Clone, Debug)]
pub struct RunTrace {
    pub x_percent: f64,
    pub costs: Vec<OpCost>,
    pub metrics: ClientMetrics,
    pub routes: Vec<Route>,
    /// Wall-clock seconds the run took. Not part of any row.
    pub wall_secs: f64,
}

impl RunTrace {
    pub fn row(&self, profile: &NetProfile) -> BenchRow {
        let mut reads: Vec<f64> = Vec::new();
        let mut total = 0.0;
        for c in &self.costs {
            let us = profile.charge_us(c.verbs, c.bytes);
            total += us;
            if c.is_read {
                reads.push(us);
            }
        }
        reads.sort_unstable_by(f64::total_cmp);
        let ops = self.costs.len() as u64;
        let mean = if reads.is_empty() { 0.0 } else { reads.iter().sum::<f64>() / reads.len() as f64 };
        BenchRow {
            x_percent: self.x_percent,
            net_profile: profile.name.clone(),
            ops,
            virtual_time_us: total,
            throughput_ops_s: if total > 0.0 { ops as f64 * 1e6 / total } else { f64::INFINITY },
            mean_read_us: mean,
            p50_read_us: percentile(&reads, 0.50),
            p99_read_us: percentile(&reads, 0.99),
            oram_read_count: self.metrics.oram_reads,
            onesided_read_count: self.metrics.direct_reads(),
            max_stash: self.metrics.max_stash,
            speedup_vs_x100: f64::NAN,
        }
    }
}

/// Nearest-rank percentile of sorted values.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = (q * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// Runs `ops` against `session` at its current X, recording costs.
pub fn run_ops(session: &mut Session, ops: &[Op]) -> Result<RunTrace> {
    session.client.flush_metrics();
    let start = Instant::now();
    let mut costs = Vec::with_capacity(ops.len());
    let mut routes = Vec::new();
    for op in ops {
        let before = session.client.transport().metrics().clone();
        let result = session.apply(op)?;
        let (verbs, bytes) = session.client.transport().metrics().since(&before);
        if let OpResult::Get { route, .. } = result {
            routes.push(route);
        }
        costs.push(OpCost { verbs, bytes, is_read: op.is_get() });
    }
    Ok(RunTrace {
        x_percent: session.client.config().mix.oram_fraction,
        costs,
        metrics: session.client.metrics(),
        routes,
        wall_secs: start.elapsed().as_secs_f64(),
    })
}

/// Runs every X of `x_values` (and X=100 for the baseline) from one loaded
/// state on the simulated backend. Each run is a fork of that state, so the
/// workload, remap and mixer streams are the same in every cell.
pub fn run_sweep(config: &Config, x_values: &[f64]) -> Result<Vec<RunTrace>> {
    if let Some(x) = x_values.iter().find(|x| !(0.0..=100.0).contains(*x)) {
        return Err(Error::config(format!("sweep value {x} outside [0, 100]")));
    }
    let w = workload::generate(&config.workload)?;
    let template = Session::loaded(config, Backend::Simulated, &config.profile, &w.load)?;
    let mut xs: Vec<f64> = x_values.to_vec();
    if !xs.contains(&100.0) {
        xs.push(100.0);
    }
    let mut runs = Vec::with_capacity(xs.len());
    for x in xs {
        let mut s = template.try_fork()?;
        s.client.set_oram_fraction(x)?;
        runs.push(run_ops(&mut s, &w.run)?);
    }
    Ok(runs)
}

/// Rows for every (profile, requested X), with speedups against X=100
/// under the same profile.
pub fn rows(runs: &[RunTrace], x_values: &[f64], profiles: &[NetProfile]) -> Result<Vec<BenchRow>> {
    let baseline = runs.iter().find(|r| r.x_percent == 100.0).ok_or_else(|| Error::argument("sweep lacks the X=100 baseline"))?;
    let mut out = Vec::new();
    for profile in profiles {
        let base = baseline.row(profile).throughput_ops_s;
        for &x in x_values {
            let run = runs.iter().find(|r| r.x_percent == x).ok_or_else(|| Error::argument(format!("no run for X={x}")))?;
            let mut row = run.row(profile);
            row.speedup_vs_x100 = row.throughput_ops_s / base;
            out.push(row);
        }
    }
    Ok(out)
}

pub fn sweep(config: &Config, x_values: &[f64], profiles: &[NetProfile]) -> Result<Vec<BenchRow>> {
    let runs = run_sweep(config, x_values)?;
    rows(&runs, x_values, profiles)
}

pub fn write_csv<W: Write>(rows: &[BenchRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row).map_err(|e| Error::Output(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::Output(e.to_string()))?;
    Ok(())
}

pub fn to_csv(rows: &[BenchRow]) -> Result<String> {
    let mut buf = Vec::new();
    write_csv(rows, &mut buf)?;
    Ok(String::from_utf8(buf).expect("csv is utf-8"))
}
