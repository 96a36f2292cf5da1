use crate::autodiff::{record_objective, reverse_sweep_count, Objective};
use crate::vector::{GradVector, WeightVector};

use super::{positive, OptimError, StepReport};

/// `W - lr * g`.
pub fn sgd_step(weights: &WeightVector, grad: &GradVector, lr: f64) -> WeightVector {
    assert_eq!(weights.len(), grad.len(), "weights and gradient lengths differ");
    WeightVector::new(
        weights
            .as_slice()
            .iter()
            .zip(grad.as_slice())
            .map(|(w, g)| w - lr * g)
            .collect(),
    )
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub delta: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            delta: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<(), OptimError> {
        positive("learning_rate", self.learning_rate)?;
        positive("delta", self.delta)?;
        for (name, beta) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&beta) {
                return Err(OptimError::Config(format!("{name} must lie in [0, 1), got {beta}")));
            }
        }
        Ok(())
    }
}

/// Moment estimates `s` (mean) and `r` (raw second moment) after `k` steps.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub s: Vec<f64>,
    pub r: Vec<f64>,
    pub k: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self {
            s: vec![0.0; n],
            r: vec![0.0; n],
            k: 0,
        }
    }

    /// Running mean of the moment vectors in index order; equal states map to
    /// themselves exactly.
    pub fn mean(states: &[&AdamState]) -> AdamState {
        let first = states.first().expect("at least one state");
        let mut out = (*first).clone();
        for (i, st) in states.iter().enumerate().skip(1) {
            assert_eq!(st.k, first.k, "adam states at different step counts");
            let inv = 1.0 / (i + 1) as f64;
            running_mean(&mut out.s, &st.s, inv);
            running_mean(&mut out.r, &st.r, inv);
        }
        out
    }

    /// Advances the moments by `grad` and returns the bias-corrected update
    /// `-a0 * s_hat / (delta + sqrt(r_hat))`.
    fn advance(&mut self, config: &AdamConfig, grad: &[f64]) -> Vec<f64> {
        assert_eq!(self.s.len(), grad.len(), "adam state and gradient lengths differ");
        self.k += 1;
        let k = i32::try_from(self.k).unwrap_or(i32::MAX);
        let c1 = 1.0 - config.beta1.powi(k);
        let c2 = 1.0 - config.beta2.powi(k);
        let mut delta = Vec::with_capacity(grad.len());
        for ((s, r), &g) in self.s.iter_mut().zip(self.r.iter_mut()).zip(grad) {
            *s = config.beta1 * *s + (1.0 - config.beta1) * g;
            *r = config.beta2 * *r + (1.0 - config.beta2) * g * g;
            let s_hat = *s / c1;
            let r_hat = *r / c2;
            delta.push(-(config.learning_rate * s_hat / (config.delta + r_hat.sqrt())));
        }
        delta
    }
}

fn running_mean(acc: &mut [f64], next: &[f64], inv_count: f64) {
    for (m, &u) in acc.iter_mut().zip(next) {
        *m += (u - *m) * inv_count;
    }
}

/// One Adam step: returns the advanced state and `W - a0 * s_hat / (delta + sqrt(r_hat))`.
pub fn adam_step(
    state: &AdamState,
    config: &AdamConfig,
    weights: &WeightVector,
    grad: &GradVector,
) -> (AdamState, WeightVector) {
    assert_eq!(weights.len(), grad.len(), "weights and gradient lengths differ");
    let mut next = state.clone();
    let delta = next.advance(config, grad.as_slice());
    let w = weights.as_slice().iter().zip(&delta).map(|(w, d)| w + d).collect();
    (next, WeightVector::new(w))
}

/// Loss, gradient and the number of reverse sweeps that took.
fn loss_and_gradient<O: Objective + ?Sized>(
    objective: &O,
    weights: &WeightVector,
) -> Result<(f64, GradVector, u64), OptimError> {
    let before = reverse_sweep_count();
    let (tape, loss) = record_objective(objective, weights)?;
    let grad = tape.gradient()?;
    Ok((loss, grad, reverse_sweep_count() - before))
}

fn first_order_report(loss: f64, grad: &GradVector, sweeps: u64, delta: &[f64], weights: &WeightVector) -> StepReport {
    StepReport {
        loss_before: loss,
        grad_norm: grad.norm(),
        cg_iterations: 0,
        cg_termination: None,
        fallback_used: false,
        direction_dot_grad: crate::vector::dot(grad.as_slice(), delta),
        reverse_sweeps: sweeps,
        snapshot_hash: weights.bit_hash(),
    }
}

/// SGD update `-lr * g` at `weights`.
pub fn sgd_update<O: Objective + ?Sized>(
    objective: &O,
    weights: &WeightVector,
    lr: f64,
) -> Result<(Vec<f64>, StepReport), OptimError> {
    let (loss, grad, sweeps) = loss_and_gradient(objective, weights)?;
    let delta: Vec<f64> = grad.as_slice().iter().map(|g| -(lr * g)).collect();
    let report = first_order_report(loss, &grad, sweeps, &delta, weights);
    Ok((delta, report))
}

/// Adam update at `weights`, with the state it leaves behind.
pub fn adam_update<O: Objective + ?Sized>(
    objective: &O,
    weights: &WeightVector,
    config: &AdamConfig,
    state: &AdamState,
) -> Result<(Vec<f64>, StepReport, AdamState), OptimError> {
    let (loss, grad, sweeps) = loss_and_gradient(objective, weights)?;
    let mut next = state.clone();
    let delta = next.advance(config, grad.as_slice());
    let report = first_order_report(loss, &grad, sweeps, &delta, weights);
    Ok((delta, report, next))
}
