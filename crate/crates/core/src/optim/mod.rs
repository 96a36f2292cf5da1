//! SGD, Adam and the damped Newton-CG step behind one step interface.
//!
//! Every optimizer produces an additive update `delta` so that the new weights
//! are `W + delta`. The data-parallel driver reduces these deltas across
//! workers before applying them.

mod first_order;
mod newton;

use thiserror::Error;

pub use first_order::{adam_step, adam_update, sgd_step, sgd_update, AdamConfig, AdamState};
pub use newton::{feasibility_check, newton_cg_step, newton_cg_update, NewtonCgConfig};

use crate::autodiff::{AutodiffError, Objective};
use crate::linsolve::{CgError, Termination};
use crate::vector::WeightVector;

#[derive(Debug, Error)]
pub enum OptimError {
    #[error("invalid optimizer configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("newton-cg solve failed: {0}")]
    Cg(#[from] CgError<AutodiffError>),
}

/// Telemetry for one optimizer step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepReport {
    pub loss_before: f64,
    pub grad_norm: f64,
    /// CG iterations (Hessian-vector products); 0 for first-order methods.
    pub cg_iterations: usize,
    /// `None` for first-order methods.
    pub cg_termination: Option<Termination>,
    pub fallback_used: bool,
    /// `g . p` for the Newton direction taken, `g . delta` for first-order steps.
    pub direction_dot_grad: f64,
    /// Reverse sweeps run by this step on the calling thread.
    pub reverse_sweeps: u64,
    /// Hash of the weights the step was computed from.
    pub snapshot_hash: u64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SgdConfig {
    pub learning_rate: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self { learning_rate: 0.01 }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<(), OptimError> {
        positive("learning_rate", self.learning_rate)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OptimizerConfig {
    Sgd(SgdConfig),
    Adam(AdamConfig),
    NewtonCg(NewtonCgConfig),
}

impl OptimizerConfig {
    pub fn name(&self) -> &'static str {
        match self {
            OptimizerConfig::Sgd(_) => "sgd",
            OptimizerConfig::Adam(_) => "adam",
            OptimizerConfig::NewtonCg(_) => "newton_cg",
        }
    }

    pub fn validate(&self) -> Result<(), OptimError> {
        match self {
            OptimizerConfig::Sgd(c) => c.validate(),
            OptimizerConfig::Adam(c) => c.validate(),
            OptimizerConfig::NewtonCg(c) => c.validate(),
        }
    }
}

/// Mutable per-optimizer state. Only Adam carries any.
#[derive(Clone, Debug, PartialEq)]
pub enum OptimizerState {
    Stateless,
    Adam(AdamState),
}

impl OptimizerState {
    /// Entrywise mean of worker states in index order, used after a parallel
    /// step. All states must be of the same kind.
    pub fn mean(states: &[OptimizerState]) -> OptimizerState {
        let adam: Vec<&AdamState> = states
            .iter()
            .filter_map(|s| match s {
                OptimizerState::Adam(a) => Some(a),
                OptimizerState::Stateless => None,
            })
            .collect();
        if adam.is_empty() {
            return OptimizerState::Stateless;
        }
        assert_eq!(adam.len(), states.len(), "mixed optimizer states");
        OptimizerState::Adam(AdamState::mean(&adam))
    }
}

/// An additive update computed from a weight snapshot.
#[derive(Clone, Debug)]
pub struct Update {
    pub delta: Vec<f64>,
    pub report: StepReport,
    pub state: OptimizerState,
}

/// Configuration plus state, stepping through [`Objective`]s.
#[derive(Clone, Debug)]
pub struct Optimizer {
    config: OptimizerConfig,
    state: OptimizerState,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig, n_weights: usize) -> Result<Self, OptimError> {
        config.validate()?;
        let state = match config {
            OptimizerConfig::Adam(_) => OptimizerState::Adam(AdamState::new(n_weights)),
            _ => OptimizerState::Stateless,
        };
        Ok(Self { config, state })
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn state(&self) -> &OptimizerState {
        &self.state
    }

    pub fn set_state(&mut self, state: OptimizerState) {
        self.state = state;
    }

    /// Computes the update at `weights` without touching `self`.
    pub fn compute_update<O: Objective + ?Sized>(
        &self,
        objective: &O,
        weights: &WeightVector,
    ) -> Result<Update, OptimError> {
        let (delta, report, state) = match (&self.config, &self.state) {
            (OptimizerConfig::Sgd(c), _) => {
                let (delta, report) = sgd_update(objective, weights, c.learning_rate)?;
                (delta, report, OptimizerState::Stateless)
            }
            (OptimizerConfig::Adam(c), OptimizerState::Adam(s)) => {
                let (delta, report, state) = adam_update(objective, weights, c, s)?;
                (delta, report, OptimizerState::Adam(state))
            }
            (OptimizerConfig::Adam(_), OptimizerState::Stateless) => {
                return Err(OptimError::Config("adam optimizer without state".into()))
            }
            (OptimizerConfig::NewtonCg(c), _) => {
                let (delta, report) = newton_cg_update(objective, weights, c)?;
                (delta, report, OptimizerState::Stateless)
            }
        };
        Ok(Update { delta, report, state })
    }

    /// One step: `W' = W + delta`, committing any state change.
    pub fn step<O: Objective + ?Sized>(
        &mut self,
        objective: &O,
        weights: &WeightVector,
    ) -> Result<(WeightVector, StepReport), OptimError> {
        let update = self.compute_update(objective, weights)?;
        self.state = update.state;
        Ok((apply_delta(weights, &update.delta), update.report))
    }
}

/// `W + delta`.
pub fn apply_delta(weights: &WeightVector, delta: &[f64]) -> WeightVector {
    assert_eq!(weights.len(), delta.len());
    WeightVector::new(weights.as_slice().iter().zip(delta).map(|(w, d)| w + d).collect())
}

fn positive(name: &str, value: f64) -> Result<(), OptimError> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(OptimError::Config(format!(
            "{name} must be positive and finite, got {value}"
        )))
    }
}

#[cfg(test)]
mod tests;
