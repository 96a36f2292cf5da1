use std::fmt::Write;
use std::time::Instant;

use crate::data::{epoch_batches, Dataset};
use crate::network::Network;
use crate::optim::{Optimizer, OptimizerConfig};

use super::{parallel_step, ParallelError, ParallelPlan, Reduction};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScalingRecord {
    pub workers: usize,
    pub wall_seconds: f64,
    pub parallel_efficiency: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ScalingRun {
    pub records: Vec<ScalingRecord>,
    pub warnings: Vec<String>,
}

/// `t(1) / (k * t(k))`.
pub fn efficiency(t1: f64, workers: usize, tk: f64) -> f64 {
    t1 / (workers as f64 * tk)
}

impl ScalingRecord {
    /// Builds records from `(workers, seconds)` pairs; the pair with one
    /// worker is the baseline.
    pub fn from_times(times: &[(usize, f64)]) -> Result<Vec<ScalingRecord>, ParallelError> {
        let t1 = times
            .iter()
            .find(|(k, _)| *k == 1)
            .map(|(_, t)| *t)
            .ok_or_else(|| ParallelError::Plan("worker counts must include 1".into()))?;
        Ok(times
            .iter()
            .map(|&(workers, wall_seconds)| ScalingRecord {
                workers,
                wall_seconds,
                parallel_efficiency: if workers == 1 {
                    1.0
                } else {
                    efficiency(t1, workers, wall_seconds)
                },
            })
            .collect())
    }
}

/// Percentage truncated to one decimal, without a trailing `.0`
/// (`0.86667 -> "86.6%"`, `1.0 -> "100%"`).
pub fn format_efficiency(e: f64) -> String {
    let tenths = (e * 1000.0 + 1e-9).floor() as i64;
    if tenths % 10 == 0 {
        format!("{}%", tenths / 10)
    } else {
        format!("{}.{}%", tenths / 10, tenths % 10)
    }
}

fn format_seconds(t: f64) -> String {
    if t.fract() == 0.0 {
        format!("{t:.0}s")
    } else {
        format!("{t:.2}s")
    }
}

/// Runtime and parallel-efficiency rows, one column per worker count.
pub fn format_table(records: &[ScalingRecord]) -> String {
    let head: Vec<String> = records
        .iter()
        .map(|r| format!("{} worker{}", r.workers, if r.workers == 1 { "" } else { "s" }))
        .collect();
    let runtime: Vec<String> = records.iter().map(|r| format_seconds(r.wall_seconds)).collect();
    let eff: Vec<String> = records
        .iter()
        .map(|r| format_efficiency(r.parallel_efficiency))
        .collect();
    let width = head
        .iter()
        .chain(&runtime)
        .chain(&eff)
        .map(String::len)
        .max()
        .unwrap_or(0);
    let mut out = String::new();
    for (label, cells) in [("", &head), ("runtime", &runtime), ("parallel efficiency", &eff)] {
        let _ = write!(out, "{label:<20}");
        for cell in cells.iter() {
            let _ = write!(out, " | {cell:>width$}");
        }
        out.push('\n');
    }
    out
}

/// `workers,wall_seconds,parallel_efficiency` with one row per record.
pub fn scaling_csv(records: &[ScalingRecord]) -> String {
    let mut out = String::from("workers,wall_seconds,parallel_efficiency\n");
    for r in records {
        let _ = writeln!(out, "{},{},{}", r.workers, r.wall_seconds, r.parallel_efficiency);
    }
    out
}

/// Times one epoch per worker count. Every run starts from the same weights
/// and consumes the same per-worker batches; only the grouping into parallel
/// steps changes with `k`.
pub fn run_scaling_benchmark(
    network: &Network,
    dataset: &Dataset,
    config: OptimizerConfig,
    worker_counts: &[usize],
    batch_size: usize,
    init_seed: u64,
    shuffle_seed: u64,
) -> Result<ScalingRun, ParallelError> {
    if !worker_counts.contains(&1) {
        return Err(ParallelError::Plan("worker counts must include 1".into()));
    }
    let capacity = std::thread::available_parallelism().map_or(1, |n| n.get());
    let batches = epoch_batches(dataset, batch_size, 0, shuffle_seed, true);
    let mut warnings = Vec::new();
    let mut times = Vec::with_capacity(worker_counts.len());
    for &k in worker_counts {
        if k > capacity {
            let msg = format!("{k} workers exceed the {capacity} available hardware threads");
            log::warn!("{msg}");
            warnings.push(msg);
        }
        let plan = ParallelPlan::new(k, Reduction::Mean, batch_size)?;
        let mut weights = network.init_weights(init_seed);
        let mut optimizer =
            Optimizer::new(config, weights.len()).map_err(|source| ParallelError::Worker { index: 0, source })?;
        let start = Instant::now();
        for group in batches.chunks(k) {
            weights = parallel_step(network, &weights, group, &mut optimizer, &plan)?.0;
        }
        times.push((k, start.elapsed().as_secs_f64()));
    }
    Ok(ScalingRun {
        records: ScalingRecord::from_times(&times)?,
        warnings,
    })
}
