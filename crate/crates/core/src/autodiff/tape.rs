use std::sync::Arc;

use super::matrix::Matrix;
use super::op::{self, Op};
use super::sweep::{self, NumericSweep, RecordingSweep};
use super::AutodiffError;
use crate::vector::GradVector;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub(crate) enum NodeKind {
    /// Segment `slot` of the flat weight vector.
    Param(usize),
    Const,
    Op(Op<Var>),
}

#[derive(Clone, Debug)]
pub(crate) struct Node {
    pub(crate) kind: NodeKind,
    pub(crate) value: Arc<Matrix>,
    pub(crate) requires_grad: bool,
}

/// A contiguous block of the weight vector viewed as a `rows x cols` matrix.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ParamSlot {
    pub(crate) offset: usize,
    pub(crate) rows: usize,
    pub(crate) cols: usize,
}

/// Recorded computation over a flat weight vector.
///
/// Nodes are appended in evaluation order, so every node's inputs precede it.
/// A reverse sweep can either evaluate adjoints directly or record them as new
/// nodes; the second form is what makes Hessian-vector products possible.
#[derive(Clone, Debug)]
pub struct Tape {
    pub(crate) nodes: Vec<Node>,
    pub(crate) slots: Vec<ParamSlot>,
    n_weights: usize,
    loss: Option<Var>,
}

impl Tape {
    pub fn new(n_weights: usize) -> Self {
        Self {
            nodes: Vec::new(),
            slots: Vec::new(),
            n_weights,
            loss: None,
        }
    }

    pub fn n_weights(&self) -> usize {
        self.n_weights
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn loss_var(&self) -> Option<Var> {
        self.loss
    }

    /// Scalar value of the loss node.
    pub fn loss(&self) -> Option<f64> {
        self.loss.map(|v| self.value(v).item())
    }

    /// Registers `weights[offset..offset + rows * cols]` as a differentiable input.
    pub fn param(&mut self, weights: &[f64], offset: usize, rows: usize, cols: usize) -> Result<Var, AutodiffError> {
        let end = offset + rows * cols;
        if weights.len() != self.n_weights || end > self.n_weights {
            return Err(AutodiffError::LengthMismatch {
                expected: self.n_weights,
                actual: weights.len().max(end),
            });
        }
        let slot = self.slots.len();
        self.slots.push(ParamSlot { offset, rows, cols });
        let value = Matrix::from_vec(rows, cols, weights[offset..end].to_vec());
        Ok(self.push(NodeKind::Param(slot), value, true))
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(NodeKind::Const, value, false)
    }

    /// Appends `op`, evaluating it on the current input values.
    pub fn apply(&mut self, op: Op<Var>) -> Result<Var, AutodiffError> {
        let value = {
            let refs = op.map(|v| self.nodes[v.0].value.as_ref());
            op::check_shapes(&refs).map_err(|detail| AutodiffError::Shape { op: op.name(), detail })?;
            op::eval(&refs)
        };
        Ok(self.push_op(op, value))
    }

    pub(crate) fn push_op(&mut self, op: Op<Var>, value: Matrix) -> Var {
        let requires_grad = op.is_differentiable() && op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        self.push(NodeKind::Op(op), value, requires_grad)
    }

    fn push(&mut self, kind: NodeKind, value: Matrix, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            kind,
            value: Arc::new(value),
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.apply(Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.apply(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.apply(Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.apply(Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var, AutodiffError> {
        self.apply(Op::Affine {
            input: a,
            scale: factor,
            shift: 0.0,
        })
    }

    pub fn sum_all(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.apply(Op::SumAll(a))
    }

    /// Adds a `1 x n` bias row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, AutodiffError> {
        let rows = self.value(a).rows();
        let tiled = self.apply(Op::RepeatRows { input: row, rows })?;
        self.add(a, tiled)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.apply(Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.apply(Op::Sigmoid(a))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.apply(Op::Relu(a))
    }

    pub fn softmax(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.apply(Op::Softmax(a))
    }

    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: Var) -> Result<Var, AutodiffError> {
        self.apply(Op::SoftmaxCrossEntropy { logits, targets })
    }

    /// Marks `v` as the scalar output that sweeps start from.
    ///
    /// Fails if `v` is not `1 x 1` or its value is not finite; in the latter
    /// case the error names the first non-finite node.
    pub fn set_loss(&mut self, v: Var) -> Result<f64, AutodiffError> {
        let value = self.value(v);
        if value.shape() != (1, 1) {
            return Err(AutodiffError::Shape {
                op: "loss",
                detail: format!("loss must be 1x1, got {:?}", value.shape()),
            });
        }
        let loss = value.item();
        if !loss.is_finite() {
            let node = self.nodes.iter().position(|n| !n.value.is_finite()).unwrap_or(v.0);
            return Err(AutodiffError::NonFiniteLoss { node });
        }
        self.loss = Some(v);
        Ok(loss)
    }

    fn require_loss(&self) -> Result<Var, AutodiffError> {
        self.loss.ok_or(AutodiffError::NoLoss)
    }

    /// Gradient of the loss with respect to all weights. One reverse sweep;
    /// the tape is left untouched.
    pub fn gradient(&self) -> Result<GradVector, AutodiffError> {
        let root = self.require_loss()?;
        let mut builder = NumericSweep::new(self);
        let adjoints = sweep::reverse_sweep(&mut builder, root);
        let grad = self.flatten(adjoints.iter().map(|a| a.as_deref()));
        check_finite(grad, "gradient")
    }

    /// Hessian-vector product `H s` as the gradient of `grad(L) . s`.
    ///
    /// Runs two reverse sweeps: the first records its adjoint arithmetic on
    /// the tape, the second differentiates the recorded dot product. Nodes
    /// added along the way are removed again before returning.
    pub fn hvp(&mut self, s: &[f64]) -> Result<GradVector, AutodiffError> {
        let root = self.require_loss()?;
        if s.len() != self.n_weights {
            return Err(AutodiffError::LengthMismatch {
                expected: self.n_weights,
                actual: s.len(),
            });
        }
        if s.iter().any(|v| !v.is_finite()) {
            return Err(AutodiffError::NonFinite { what: "hvp direction" });
        }
        let mark = self.nodes.len();
        let result = self.hvp_inner(root, s);
        self.nodes.truncate(mark);
        check_finite(result?, "hessian-vector product")
    }

    fn hvp_inner(&mut self, root: Var, s: &[f64]) -> Result<GradVector, AutodiffError> {
        let grads = {
            let mut builder = RecordingSweep::new(self);
            sweep::reverse_sweep(&mut builder, root)
        };
        let mut dot: Option<Var> = None;
        for (slot, grad) in self.slots.clone().into_iter().zip(grads) {
            let Some(grad) = grad else { continue };
            let direction = Matrix::from_vec(
                slot.rows,
                slot.cols,
                s[slot.offset..slot.offset + slot.rows * slot.cols].to_vec(),
            );
            let direction = self.constant(direction);
            let prod = self.mul(grad, direction)?;
            let term = self.sum_all(prod)?;
            dot = Some(match dot {
                None => term,
                Some(acc) => self.add(acc, term)?,
            });
        }
        let dot = match dot {
            Some(d) => d,
            // loss does not depend on any weight
            None => self.constant(Matrix::scalar(0.0)),
        };
        let mut builder = NumericSweep::new(self);
        let adjoints = sweep::reverse_sweep(&mut builder, dot);
        Ok(self.flatten(adjoints.iter().map(|a| a.as_deref())))
    }

    fn flatten<'a>(&self, adjoints: impl Iterator<Item = Option<&'a Matrix>>) -> GradVector {
        let mut out = vec![0.0; self.n_weights];
        for (slot, adj) in self.slots.iter().zip(adjoints) {
            if let Some(adj) = adj {
                let dst = &mut out[slot.offset..slot.offset + slot.rows * slot.cols];
                for (d, &a) in dst.iter_mut().zip(adj.as_slice()) {
                    *d += a;
                }
            }
        }
        GradVector::new(out)
    }
}

fn check_finite(v: GradVector, what: &'static str) -> Result<GradVector, AutodiffError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(AutodiffError::NonFinite { what })
    }
}
