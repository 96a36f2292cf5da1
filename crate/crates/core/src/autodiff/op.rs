//! Primitive operations and their forward rules.
//!
//! `Op` is generic over the handle type so the same enum describes nodes on
//! the tape (`Op<Var>`) and operations applied by a reverse sweep, which may
//! either record new nodes or evaluate directly on values.

use super::matrix::Matrix;

/// Probabilities below this are clamped before taking the log.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub enum Op<H> {
    MatMul(H, H),
    Transpose(H),
    Add(H, H),
    Sub(H, H),
    /// Elementwise product.
    Mul(H, H),
    /// `scale * x + shift`, elementwise.
    Affine {
        input: H,
        scale: f64,
        shift: f64,
    },
    /// `m x n -> 1 x n`
    SumRows(H),
    /// `1 x n -> rows x n`
    RepeatRows {
        input: H,
        rows: usize,
    },
    /// `m x n -> m x 1`
    SumCols(H),
    /// `m x 1 -> m x cols`
    RepeatCols {
        input: H,
        cols: usize,
    },
    /// `m x n -> 1 x 1`
    SumAll(H),
    /// `1 x 1 -> rows x cols`
    Fill {
        input: H,
        rows: usize,
        cols: usize,
    },
    Tanh(H),
    Sigmoid(H),
    Relu(H),
    /// Heaviside indicator `x > 0`. Carries no derivative.
    Step(H),
    /// Row-wise softmax.
    Softmax(H),
    /// `-sum(targets * log(clamp(softmax(logits))))`, a `1 x 1` result.
    SoftmaxCrossEntropy {
        logits: H,
        targets: H,
    },
}

impl<H> Op<H> {
    pub fn inputs(&self) -> Vec<&H> {
        use Op::*;
        match self {
            MatMul(a, b) | Add(a, b) | Sub(a, b) | Mul(a, b) => vec![a, b],
            SoftmaxCrossEntropy { logits, targets } => vec![logits, targets],
            Transpose(a) | SumRows(a) | SumCols(a) | SumAll(a) | Tanh(a) | Sigmoid(a) | Relu(a) | Step(a)
            | Softmax(a) => vec![a],
            Affine { input, .. } | RepeatRows { input, .. } | RepeatCols { input, .. } | Fill { input, .. } => {
                vec![input]
            }
        }
    }

    pub fn map<'a, H2>(&'a self, mut f: impl FnMut(&'a H) -> H2) -> Op<H2> {
        use Op::*;
        match self {
            MatMul(a, b) => MatMul(f(a), f(b)),
            Transpose(a) => Transpose(f(a)),
            Add(a, b) => Add(f(a), f(b)),
            Sub(a, b) => Sub(f(a), f(b)),
            Mul(a, b) => Mul(f(a), f(b)),
            Affine { input, scale, shift } => Affine {
                input: f(input),
                scale: *scale,
                shift: *shift,
            },
            SumRows(a) => SumRows(f(a)),
            RepeatRows { input, rows } => RepeatRows {
                input: f(input),
                rows: *rows,
            },
            SumCols(a) => SumCols(f(a)),
            RepeatCols { input, cols } => RepeatCols {
                input: f(input),
                cols: *cols,
            },
            SumAll(a) => SumAll(f(a)),
            Fill { input, rows, cols } => Fill {
                input: f(input),
                rows: *rows,
                cols: *cols,
            },
            Tanh(a) => Tanh(f(a)),
            Sigmoid(a) => Sigmoid(f(a)),
            Relu(a) => Relu(f(a)),
            Step(a) => Step(f(a)),
            Softmax(a) => Softmax(f(a)),
            SoftmaxCrossEntropy { logits, targets } => SoftmaxCrossEntropy {
                logits: f(logits),
                targets: f(targets),
            },
        }
    }

    /// Whether the op propagates derivatives to its inputs at all.
    pub fn is_differentiable(&self) -> bool {
        !matches!(self, Op::Step(_))
    }

    pub fn name(&self) -> &'static str {
        use Op::*;
        match self {
            MatMul(..) => "matmul",
            Transpose(_) => "transpose",
            Add(..) => "add",
            Sub(..) => "sub",
            Mul(..) => "mul",
            Affine { .. } => "affine",
            SumRows(_) => "sum_rows",
            RepeatRows { .. } => "repeat_rows",
            SumCols(_) => "sum_cols",
            RepeatCols { .. } => "repeat_cols",
            SumAll(_) => "sum_all",
            Fill { .. } => "fill",
            Tanh(_) => "tanh",
            Sigmoid(_) => "sigmoid",
            Relu(_) => "relu",
            Step(_) => "step",
            Softmax(_) => "softmax",
            SoftmaxCrossEntropy { .. } => "softmax_cross_entropy",
        }
    }
}

/// Validates input shapes for `op`, describing any mismatch.
pub fn check_shapes(op: &Op<&Matrix>) -> Result<(), String> {
    use Op::*;
    let same = |a: &Matrix, b: &Matrix| {
        if a.shape() == b.shape() {
            Ok(())
        } else {
            Err(format!("{:?} vs {:?}", a.shape(), b.shape()))
        }
    };
    match op {
        MatMul(a, b) => {
            if a.cols() == b.rows() {
                Ok(())
            } else {
                Err(format!("{:?} x {:?}", a.shape(), b.shape()))
            }
        }
        Add(a, b) | Sub(a, b) | Mul(a, b) => same(a, b),
        SoftmaxCrossEntropy { logits, targets } => same(logits, targets),
        RepeatRows { input, .. } if input.rows() != 1 => {
            Err(format!("repeat_rows needs a row, got {:?}", input.shape()))
        }
        RepeatCols { input, .. } if input.cols() != 1 => {
            Err(format!("repeat_cols needs a column, got {:?}", input.shape()))
        }
        Fill { input, .. } if input.shape() != (1, 1) => Err(format!("fill needs a scalar, got {:?}", input.shape())),
        _ => Ok(()),
    }
}

/// Forward rule. Shapes must already be valid.
pub fn eval(op: &Op<&Matrix>) -> Matrix {
    use Op::*;
    match op {
        MatMul(a, b) => a.matmul(b),
        Transpose(a) => a.transpose(),
        Add(a, b) => a.zip_map(b, |x, y| x + y),
        Sub(a, b) => a.zip_map(b, |x, y| x - y),
        Mul(a, b) => a.zip_map(b, |x, y| x * y),
        Affine { input, scale, shift } => {
            let (scale, shift) = (*scale, *shift);
            input.map(|x| scale * x + shift)
        }
        SumRows(a) => a.sum_rows(),
        RepeatRows { input, rows } => input.repeat_rows(*rows),
        SumCols(a) => a.sum_cols(),
        RepeatCols { input, cols } => input.repeat_cols(*cols),
        SumAll(a) => Matrix::scalar(a.sum()),
        Fill { input, rows, cols } => Matrix::filled(*rows, *cols, input.item()),
        Tanh(a) => a.map(f64::tanh),
        Sigmoid(a) => a.map(sigmoid),
        Relu(a) => a.map(|x| if x > 0.0 { x } else { 0.0 }),
        Step(a) => a.map(|x| if x > 0.0 { 1.0 } else { 0.0 }),
        Softmax(a) => a.softmax_rows(),
        SoftmaxCrossEntropy { logits, targets } => {
            let probs = logits.softmax_rows();
            let loss: f64 = probs
                .as_slice()
                .iter()
                .zip(targets.as_slice())
                .filter(|(_, &t)| t != 0.0)
                .map(|(&p, &t)| -t * p.max(PROB_FLOOR).ln())
                .sum();
            Matrix::scalar(loss)
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cross_entropy_of_certain_prediction_is_zero() {
        let logits = Matrix::from_vec(1, 3, vec![0.0, 800.0, 0.0]);
        let targets = Matrix::from_vec(1, 3, vec![0.0, 1.0, 0.0]);
        let loss = eval(&Op::SoftmaxCrossEntropy {
            logits: &logits,
            targets: &targets,
        });
        assert_eq!(loss.item(), 0.0);
    }

    #[test]
    fn cross_entropy_clamps_vanishing_probability() {
        let logits = Matrix::from_vec(1, 2, vec![0.0, 1000.0]);
        let targets = Matrix::from_vec(1, 2, vec![1.0, 0.0]);
        let loss = eval(&Op::SoftmaxCrossEntropy {
            logits: &logits,
            targets: &targets,
        });
        assert!((loss.item() - (-PROB_FLOOR.ln())).abs() < 1e-12);
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(sigmoid(-1000.0), 0.0);
        assert_eq!(sigmoid(1000.0), 1.0);
        assert!((sigmoid(0.0) - 0.5).abs() < 1e-16);
    }
}
