//! Tape-based reverse-mode differentiation over flat weight vectors.
//!
//! Gradients take one reverse sweep. Hessian-vector products take two: the
//! first sweep records its own adjoint arithmetic on the tape, a dot product
//! with the direction is appended, and a second sweep differentiates that
//! scalar. [`reverse_sweep_count`] exposes a per-thread counter so callers can
//! verify this accounting.

mod matrix;
mod op;
mod sweep;
mod tape;

use thiserror::Error;

pub use matrix::Matrix;
pub use op::{sigmoid, Op, PROB_FLOOR};
pub use sweep::{reverse_sweep_count, set_adjoint_corruption};
pub use tape::{Tape, Var};

use crate::network::{Batch, Network, NetworkLoss};
use crate::vector::{GradVector, WeightVector};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AutodiffError {
    #[error("length mismatch: expected {expected} weights, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("non-finite loss (first non-finite value at node {node})")]
    NonFiniteLoss { node: usize },
    #[error("non-finite values in {what}")]
    NonFinite { what: &'static str },
    #[error("tape has no loss node")]
    NoLoss,
}

/// A scalar function of a flat weight vector that can be recorded on a tape.
pub trait Objective {
    fn n_weights(&self) -> usize;

    /// Records the computation and returns the `1 x 1` loss node.
    fn record(&self, tape: &mut Tape, weights: &[f64]) -> Result<Var, AutodiffError>;
}

impl<O: Objective + ?Sized> Objective for &O {
    fn n_weights(&self) -> usize {
        (**self).n_weights()
    }

    fn record(&self, tape: &mut Tape, weights: &[f64]) -> Result<Var, AutodiffError> {
        (**self).record(tape, weights)
    }
}

/// Records `objective` at `weights` and returns the tape with its loss.
pub fn record_objective<O: Objective + ?Sized>(
    objective: &O,
    weights: &WeightVector,
) -> Result<(Tape, f64), AutodiffError> {
    let n = objective.n_weights();
    if weights.len() != n {
        return Err(AutodiffError::LengthMismatch {
            expected: n,
            actual: weights.len(),
        });
    }
    if !weights.is_finite() {
        return Err(AutodiffError::NonFinite { what: "weights" });
    }
    let mut tape = Tape::new(n);
    let out = objective.record(&mut tape, weights.as_slice())?;
    let loss = tape.set_loss(out)?;
    Ok((tape, loss))
}

/// Mini-batch loss of `network` and the tape that produced it.
pub fn record_forward(network: &Network, weights: &WeightVector, batch: &Batch) -> Result<(Tape, f64), AutodiffError> {
    record_objective(&NetworkLoss::new(network, batch), weights)
}

pub fn gradient(tape: &Tape) -> Result<GradVector, AutodiffError> {
    tape.gradient()
}

/// `H(W) s` for the mini-batch loss of `network`.
pub fn hvp(
    network: &Network,
    weights: &WeightVector,
    batch: &Batch,
    s: &GradVector,
) -> Result<GradVector, AutodiffError> {
    objective_hvp(&NetworkLoss::new(network, batch), weights, s)
}

pub fn objective_gradient<O: Objective + ?Sized>(
    objective: &O,
    weights: &WeightVector,
) -> Result<GradVector, AutodiffError> {
    record_objective(objective, weights)?.0.gradient()
}

pub fn objective_hvp<O: Objective + ?Sized>(
    objective: &O,
    weights: &WeightVector,
    s: &GradVector,
) -> Result<GradVector, AutodiffError> {
    let (mut tape, _) = record_objective(objective, weights)?;
    tape.hvp(s.as_slice())
}

/// `L(w) = 0.5 * w'Aw + b'w`, recorded as a two-node network over a single
/// column of weights. `A` should be symmetric; the Hessian is `(A + A')/2`.
#[derive(Clone, Debug)]
pub struct Quadratic {
    matrix: Matrix,
    linear: Vec<f64>,
}

impl Quadratic {
    pub fn new(matrix: Matrix) -> Self {
        assert_eq!(matrix.rows(), matrix.cols(), "quadratic form needs a square matrix");
        let n = matrix.rows();
        Self {
            matrix,
            linear: vec![0.0; n],
        }
    }

    /// `0.5 * c * |w|^2`
    pub fn scaled_identity(n: usize, c: f64) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.set(i, i, c);
        }
        Self::new(m)
    }

    pub fn with_linear(mut self, linear: Vec<f64>) -> Self {
        assert_eq!(linear.len(), self.matrix.rows());
        self.linear = linear;
        self
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn linear(&self) -> &[f64] {
        &self.linear
    }
}

impl Objective for Quadratic {
    fn n_weights(&self) -> usize {
        self.matrix.rows()
    }

    fn record(&self, tape: &mut Tape, weights: &[f64]) -> Result<Var, AutodiffError> {
        let n = self.n_weights();
        let w = tape.param(weights, 0, n, 1)?;
        let a = tape.constant(self.matrix.clone());
        let aw = tape.matmul(a, w)?;
        let waw = tape.mul(w, aw)?;
        let waw = tape.sum_all(waw)?;
        let half = tape.scale(waw, 0.5)?;
        let b = tape.constant(Matrix::column(self.linear.clone()));
        let bw = tape.mul(b, w)?;
        let bw = tape.sum_all(bw)?;
        tape.add(half, bw)
    }
}

/// `inner(w) + 0.5 * lambda * |w|^2`.
#[derive(Clone, Debug)]
pub struct L2Regularized<O> {
    inner: O,
    lambda: f64,
}

impl<O: Objective> L2Regularized<O> {
    pub fn new(inner: O, lambda: f64) -> Self {
        Self { inner, lambda }
    }

    pub fn inner(&self) -> &O {
        &self.inner
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }
}

impl<O: Objective> Objective for L2Regularized<O> {
    fn n_weights(&self) -> usize {
        self.inner.n_weights()
    }

    fn record(&self, tape: &mut Tape, weights: &[f64]) -> Result<Var, AutodiffError> {
        let data = self.inner.record(tape, weights)?;
        let n = self.n_weights();
        let w = tape.param(weights, 0, n, 1)?;
        let sq = tape.mul(w, w)?;
        let sq = tape.sum_all(sq)?;
        let penalty = tape.scale(sq, 0.5 * self.lambda)?;
        tape.add(data, penalty)
    }
}
