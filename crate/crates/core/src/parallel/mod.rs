//! Data-parallel stepping: every worker computes an update from the same
//! weight snapshot on its own mini-batch, the updates are reduced in worker
//! order, and the result is applied once.

mod scaling;

use std::thread;

use thiserror::Error;

pub use scaling::{
    efficiency, format_efficiency, format_table, run_scaling_benchmark, scaling_csv, ScalingRecord, ScalingRun,
};

use crate::autodiff::Objective;
use crate::network::{Batch, Network, NetworkLoss};
use crate::optim::{apply_delta, OptimError, Optimizer, OptimizerState, StepReport, Update};
use crate::vector::WeightVector;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Reduction {
    #[default]
    Mean,
    Sum,
}

impl Reduction {
    pub fn name(self) -> &'static str {
        match self {
            Reduction::Mean => "mean",
            Reduction::Sum => "sum",
        }
    }
}

impl std::str::FromStr for Reduction {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mean" => Ok(Reduction::Mean),
            "sum" => Ok(Reduction::Sum),
            other => Err(format!("unknown reduction `{other}` (expected mean or sum)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParallelPlan {
    pub workers: usize,
    pub reduction: Reduction,
    pub per_worker_batch_size: usize,
}

impl ParallelPlan {
    pub fn new(workers: usize, reduction: Reduction, per_worker_batch_size: usize) -> Result<Self, ParallelError> {
        if workers == 0 {
            return Err(ParallelError::Plan("workers must be at least 1".into()));
        }
        if per_worker_batch_size == 0 {
            return Err(ParallelError::Plan("batch size must be at least 1".into()));
        }
        Ok(Self {
            workers,
            reduction,
            per_worker_batch_size,
        })
    }
}

#[derive(Debug, Error)]
pub enum ParallelError {
    #[error("invalid parallel plan: {0}")]
    Plan(String),
    #[error("worker {index} failed: {source}")]
    Worker {
        index: usize,
        #[source]
        source: OptimError,
    },
}

/// Reduces worker updates in index order. The mean is a running mean, so `k`
/// identical updates reduce to that update bit for bit.
pub fn reduce_updates(updates: &[Vec<f64>], reduction: Reduction) -> Vec<f64> {
    let mut acc = updates.first().expect("at least one update").clone();
    for (i, u) in updates.iter().enumerate().skip(1) {
        assert_eq!(u.len(), acc.len(), "update lengths differ");
        match reduction {
            Reduction::Mean => {
                let inv = 1.0 / (i + 1) as f64;
                for (m, &v) in acc.iter_mut().zip(u) {
                    *m += (v - *m) * inv;
                }
            }
            Reduction::Sum => {
                for (m, &v) in acc.iter_mut().zip(u) {
                    *m += v;
                }
            }
        }
    }
    acc
}

/// One data-parallel step over one objective per worker.
///
/// Up to `plan.workers` objectives are accepted; fewer occur at the end of an
/// epoch. Each worker gets its own copy of the weights and of the optimizer.
/// Worker optimizer states are averaged into `optimizer` afterwards.
pub fn parallel_step_objectives<O: Objective + Sync>(
    objectives: &[O],
    weights: &WeightVector,
    optimizer: &mut Optimizer,
    plan: &ParallelPlan,
) -> Result<(WeightVector, Vec<StepReport>), ParallelError> {
    if objectives.is_empty() || objectives.len() > plan.workers {
        return Err(ParallelError::Plan(format!(
            "expected between 1 and {} worker batches, got {}",
            plan.workers,
            objectives.len()
        )));
    }
    let results: Vec<Result<Update, OptimError>> = if objectives.len() == 1 {
        vec![optimizer.compute_update(&objectives[0], weights)]
    } else {
        let shared: &Optimizer = optimizer;
        thread::scope(|scope| {
            let handles: Vec<_> = objectives
                .iter()
                .map(|objective| {
                    let snapshot = weights.clone();
                    let worker_opt = shared.clone();
                    scope.spawn(move || worker_opt.compute_update(objective, &snapshot))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().unwrap_or_else(|panic| std::panic::resume_unwind(panic)))
                .collect()
        })
    };

    let mut deltas = Vec::with_capacity(results.len());
    let mut reports = Vec::with_capacity(results.len());
    let mut states = Vec::with_capacity(results.len());
    for (index, result) in results.into_iter().enumerate() {
        let update = result.map_err(|source| ParallelError::Worker { index, source })?;
        deltas.push(update.delta);
        reports.push(update.report);
        states.push(update.state);
    }
    let delta = reduce_updates(&deltas, plan.reduction);
    optimizer.set_state(OptimizerState::mean(&states));
    Ok((apply_delta(weights, &delta), reports))
}

/// [`parallel_step_objectives`] for the mini-batch loss of `network`.
pub fn parallel_step(
    network: &Network,
    weights: &WeightVector,
    batches: &[Batch],
    optimizer: &mut Optimizer,
    plan: &ParallelPlan,
) -> Result<(WeightVector, Vec<StepReport>), ParallelError> {
    let objectives: Vec<NetworkLoss<'_>> = batches.iter().map(|b| NetworkLoss::new(network, b)).collect();
    parallel_step_objectives(&objectives, weights, optimizer, plan)
}

#[cfg(test)]
mod tests;
