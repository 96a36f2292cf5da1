use crate::autodiff::{record_objective, reverse_sweep_count, Objective};
use crate::linsolve::{cg_solve, Termination};
use crate::vector::{dot, WeightVector};

use super::{apply_delta, positive, OptimError, StepReport};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NewtonCgConfig {
    /// Fixed step size alpha.
    pub learning_rate: f64,
    /// Tikhonov damping; also the threshold of the feasibility check.
    pub tau: f64,
    pub cg_tol: f64,
    pub max_iter: usize,
}

impl Default for NewtonCgConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            tau: 1.0,
            cg_tol: 1e-4,
            max_iter: 20,
        }
    }
}

impl NewtonCgConfig {
    pub fn validate(&self) -> Result<(), OptimError> {
        positive("learning_rate", self.learning_rate)?;
        positive("cg_tol", self.cg_tol)?;
        if !(self.tau >= 0.0 && self.tau.is_finite()) {
            return Err(OptimError::Config(format!(
                "tau must be non-negative and finite, got {}",
                self.tau
            )));
        }
        if self.max_iter == 0 {
            return Err(OptimError::Config("max_iter must be at least 1".into()));
        }
        Ok(())
    }
}

/// Returns `-g` when `g . p > tau`, otherwise `p`.
pub fn feasibility_check(g: &[f64], p: &[f64], tau: f64) -> Vec<f64> {
    assert_eq!(g.len(), p.len(), "gradient and direction lengths differ");
    if dot(g, p) > tau {
        g.iter().map(|v| -v).collect()
    } else {
        p.to_vec()
    }
}

/// The update `alpha * p`, where `p` approximately solves `(H + tau I) p = -g`
/// by CG on a single recorded tape, then passes the feasibility check.
pub fn newton_cg_update<O: Objective + ?Sized>(
    objective: &O,
    weights: &WeightVector,
    config: &NewtonCgConfig,
) -> Result<(Vec<f64>, StepReport), OptimError> {
    config.validate()?;
    let sweeps_before = reverse_sweep_count();
    let (mut tape, loss) = record_objective(objective, weights)?;
    let grad = tape.gradient()?;
    let g = grad.as_slice();
    let mut report = StepReport {
        loss_before: loss,
        grad_norm: grad.norm(),
        cg_iterations: 0,
        cg_termination: Some(Termination::ZeroRhs),
        fallback_used: false,
        direction_dot_grad: 0.0,
        reverse_sweeps: 1,
        snapshot_hash: weights.bit_hash(),
    };
    if report.grad_norm == 0.0 {
        report.reverse_sweeps = reverse_sweep_count() - sweeps_before;
        return Ok((vec![0.0; g.len()], report));
    }

    let rhs: Vec<f64> = g.iter().map(|v| -v).collect();
    let tau = config.tau;
    let cg = cg_solve(
        |v: &[f64]| {
            let mut hv = tape.hvp(v)?.into_vec();
            for (h, x) in hv.iter_mut().zip(v) {
                *h += tau * x;
            }
            Ok(hv)
        },
        &rhs,
        config.cg_tol,
        config.max_iter,
    )?;

    let p = feasibility_check(g, &cg.solution, tau);
    report.fallback_used = dot(g, &cg.solution) > tau;
    report.cg_iterations = cg.iterations;
    report.cg_termination = Some(cg.termination);
    report.reverse_sweeps = reverse_sweep_count() - sweeps_before;
    report.direction_dot_grad = dot(g, &p);
    let delta = p.iter().map(|v| config.learning_rate * v).collect();
    Ok((delta, report))
}

/// `W' = W + alpha * p` for the Newton-CG direction `p` at `weights`.
pub fn newton_cg_step<O: Objective + ?Sized>(
    objective: &O,
    weights: &WeightVector,
    config: &NewtonCgConfig,
) -> Result<(WeightVector, StepReport), OptimError> {
    let (delta, report) = newton_cg_update(objective, weights, config)?;
    if report.cg_termination == Some(Termination::ZeroRhs) {
        return Ok((weights.clone(), report));
    }
    Ok((apply_delta(weights, &delta), report))
}
