//! Reverse sweeps over a [`Tape`].
//!
//! Adjoint rules are written once against [`Builder`]. `NumericSweep`
//! evaluates them on values; `RecordingSweep` appends them to the tape as
//! ordinary nodes so the resulting gradient can itself be differentiated.

use std::cell::Cell;
use std::sync::Arc;

use super::matrix::Matrix;
use super::op::{self, Op, PROB_FLOOR};
use super::tape::{NodeKind, Tape, Var};

thread_local! {
    static SWEEPS: Cell<u64> = const { Cell::new(0) };
    static CORRUPT_MATMUL_ADJOINT: Cell<bool> = const { Cell::new(false) };
}

/// Number of reverse sweeps run on the current thread so far.
pub fn reverse_sweep_count() -> u64 {
    SWEEPS.with(Cell::get)
}

/// Test hook: perturbs the matmul adjoint on the current thread so that
/// gradient checks have something to catch.
#[doc(hidden)]
pub fn set_adjoint_corruption(enabled: bool) {
    CORRUPT_MATMUL_ADJOINT.with(|c| c.set(enabled));
}

pub(crate) trait Builder {
    type H: Clone;

    fn tape(&self) -> &Tape;
    fn lift(&mut self, v: Var) -> Self::H;
    fn value<'a>(&'a self, h: &'a Self::H) -> &'a Matrix;
    fn constant(&mut self, m: Matrix) -> Self::H;
    fn apply(&mut self, op: Op<Self::H>) -> Self::H;
}

pub(crate) struct NumericSweep<'t> {
    tape: &'t Tape,
}

impl<'t> NumericSweep<'t> {
    pub(crate) fn new(tape: &'t Tape) -> Self {
        Self { tape }
    }
}

impl Builder for NumericSweep<'_> {
    type H = Arc<Matrix>;

    fn tape(&self) -> &Tape {
        self.tape
    }

    fn lift(&mut self, v: Var) -> Arc<Matrix> {
        Arc::clone(&self.tape.nodes[v.0].value)
    }

    fn value<'a>(&'a self, h: &'a Arc<Matrix>) -> &'a Matrix {
        h
    }

    fn constant(&mut self, m: Matrix) -> Arc<Matrix> {
        Arc::new(m)
    }

    fn apply(&mut self, op: Op<Arc<Matrix>>) -> Arc<Matrix> {
        Arc::new(op::eval(&op.map(|h| h.as_ref())))
    }
}

pub(crate) struct RecordingSweep<'t> {
    tape: &'t mut Tape,
}

impl<'t> RecordingSweep<'t> {
    pub(crate) fn new(tape: &'t mut Tape) -> Self {
        Self { tape }
    }
}

impl Builder for RecordingSweep<'_> {
    type H = Var;

    fn tape(&self) -> &Tape {
        self.tape
    }

    fn lift(&mut self, v: Var) -> Var {
        v
    }

    fn value<'a>(&'a self, h: &'a Var) -> &'a Matrix {
        self.tape.value(*h)
    }

    fn constant(&mut self, m: Matrix) -> Var {
        self.tape.constant(m)
    }

    fn apply(&mut self, op: Op<Var>) -> Var {
        let value = op::eval(&op.map(|v| self.tape.value(*v)));
        self.tape.push_op(op, value)
    }
}

/// Propagates adjoints from `root` (a `1 x 1` node) back to every parameter
/// slot. Returns one entry per slot; `None` where the root does not depend
/// on that slot.
pub(crate) fn reverse_sweep<B: Builder>(b: &mut B, root: Var) -> Vec<Option<B::H>> {
    SWEEPS.with(|c| c.set(c.get() + 1));
    let mut slots: Vec<Option<B::H>> = vec![None; b.tape().slots.len()];
    let mut adjoint: Vec<Option<B::H>> = vec![None; root.0 + 1];
    adjoint[root.0] = Some(b.constant(Matrix::scalar(1.0)));

    for id in (0..=root.0).rev() {
        let Some(g) = adjoint[id].take() else {
            continue;
        };
        let kind = {
            let node = &b.tape().nodes[id];
            if !node.requires_grad {
                continue;
            }
            node.kind.clone()
        };
        match kind {
            NodeKind::Param(slot) => {
                slots[slot] = Some(match slots[slot].take() {
                    None => g,
                    Some(prev) => b.apply(Op::Add(prev, g)),
                });
            }
            NodeKind::Const => {}
            NodeKind::Op(op) => {
                for (input, contrib) in vjp(b, &op, Var(id), g) {
                    adjoint[input.0] = Some(match adjoint[input.0].take() {
                        None => contrib,
                        Some(prev) => b.apply(Op::Add(prev, contrib)),
                    });
                }
            }
        }
    }
    slots
}

/// Adjoint contributions of `op` (whose output node is `out`) given the
/// output adjoint `g`. Inputs that do not require gradients are skipped.
fn vjp<B: Builder>(b: &mut B, op: &Op<Var>, out: Var, g: B::H) -> Vec<(Var, B::H)> {
    let needs = |b: &B, v: &Var| b.tape().nodes[v.0].requires_grad;
    let mut contribs = Vec::with_capacity(2);
    match op {
        Op::MatMul(x, w) => {
            if needs(b, x) {
                let wh = b.lift(*w);
                let wt = b.apply(Op::Transpose(wh));
                contribs.push((*x, b.apply(Op::MatMul(g.clone(), wt))));
            }
            if needs(b, w) {
                let xh = b.lift(*x);
                let xt = b.apply(Op::Transpose(xh));
                let mut dw = b.apply(Op::MatMul(xt, g));
                if CORRUPT_MATMUL_ADJOINT.with(Cell::get) {
                    dw = b.apply(Op::Affine {
                        input: dw,
                        scale: 1.001,
                        shift: 0.0,
                    });
                }
                contribs.push((*w, dw));
            }
        }
        Op::Transpose(x) => contribs.push((*x, b.apply(Op::Transpose(g)))),
        Op::Add(x, y) => {
            if needs(b, x) {
                contribs.push((*x, g.clone()));
            }
            if needs(b, y) {
                contribs.push((*y, g));
            }
        }
        Op::Sub(x, y) => {
            if needs(b, x) {
                contribs.push((*x, g.clone()));
            }
            if needs(b, y) {
                let neg = b.apply(Op::Affine {
                    input: g,
                    scale: -1.0,
                    shift: 0.0,
                });
                contribs.push((*y, neg));
            }
        }
        Op::Mul(x, y) => {
            if needs(b, x) {
                let yh = b.lift(*y);
                contribs.push((*x, b.apply(Op::Mul(g.clone(), yh))));
            }
            if needs(b, y) {
                let xh = b.lift(*x);
                contribs.push((*y, b.apply(Op::Mul(g, xh))));
            }
        }
        Op::Affine { input, scale, .. } => {
            let d = b.apply(Op::Affine {
                input: g,
                scale: *scale,
                shift: 0.0,
            });
            contribs.push((*input, d));
        }
        Op::SumRows(x) => {
            let rows = b.tape().value(*x).rows();
            contribs.push((*x, b.apply(Op::RepeatRows { input: g, rows })));
        }
        Op::RepeatRows { input, .. } => contribs.push((*input, b.apply(Op::SumRows(g)))),
        Op::SumCols(x) => {
            let cols = b.tape().value(*x).cols();
            contribs.push((*x, b.apply(Op::RepeatCols { input: g, cols })));
        }
        Op::RepeatCols { input, .. } => contribs.push((*input, b.apply(Op::SumCols(g)))),
        Op::SumAll(x) => {
            let (rows, cols) = b.tape().value(*x).shape();
            contribs.push((*x, b.apply(Op::Fill { input: g, rows, cols })));
        }
        Op::Fill { input, .. } => contribs.push((*input, b.apply(Op::SumAll(g)))),
        Op::Tanh(x) => {
            // 1 - y^2
            let y = b.lift(out);
            let y2 = b.apply(Op::Mul(y.clone(), y));
            let d = b.apply(Op::Affine {
                input: y2,
                scale: -1.0,
                shift: 1.0,
            });
            contribs.push((*x, b.apply(Op::Mul(g, d))));
        }
        Op::Sigmoid(x) => {
            // y (1 - y)
            let y = b.lift(out);
            let one_minus = b.apply(Op::Affine {
                input: y.clone(),
                scale: -1.0,
                shift: 1.0,
            });
            let d = b.apply(Op::Mul(y, one_minus));
            contribs.push((*x, b.apply(Op::Mul(g, d))));
        }
        Op::Relu(x) => {
            // subgradient 0 at the kink
            let xh = b.lift(*x);
            let mask = b.apply(Op::Step(xh));
            contribs.push((*x, b.apply(Op::Mul(g, mask))));
        }
        Op::Step(_) => {}
        Op::Softmax(x) => {
            // y * (g - rowsum(g * y))
            let y = b.lift(out);
            let cols = b.value(&y).cols();
            let gy = b.apply(Op::Mul(g.clone(), y.clone()));
            let s = b.apply(Op::SumCols(gy));
            let s = b.apply(Op::RepeatCols { input: s, cols });
            let centered = b.apply(Op::Sub(g, s));
            contribs.push((*x, b.apply(Op::Mul(y, centered))));
        }
        Op::SoftmaxCrossEntropy { logits, targets } => {
            // d/dz = g * (p * rowsum(t*m) - t*m), where m masks clamped
            // probabilities (their log is constant).
            let z = b.tape().value(*logits);
            let t = b.tape().value(*targets);
            let probs = z.softmax_rows();
            let tm = t.zip_map(&probs, |t, p| if p >= PROB_FLOOR { t } else { 0.0 });
            let scale = tm.sum_cols().repeat_cols(tm.cols());
            let (rows, cols) = z.shape();

            let zh = b.lift(*logits);
            let p = b.apply(Op::Softmax(zh));
            let scale = b.constant(scale);
            let tm = b.constant(tm);
            let ps = b.apply(Op::Mul(p, scale));
            let d = b.apply(Op::Sub(ps, tm));
            let gf = b.apply(Op::Fill { input: g, rows, cols });
            contribs.push((*logits, b.apply(Op::Mul(gf, d))));
        }
    }
    contribs.retain(|(v, _)| b.tape().nodes[v.0].requires_grad);
    contribs
}
