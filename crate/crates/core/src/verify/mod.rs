//! Numerical checks against independent oracles: central finite differences,
//! dense linear solves and closed-form Hessians of linear least squares.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{objective_gradient, record_objective, AutodiffError, Objective};
use crate::linsolve::cg_solve;
use crate::network::{Activation, Batch, LossKind, Network, NetworkLoss};
use crate::optim::{newton_cg_step, NewtonCgConfig, OptimError};
use crate::vector::{axpy, dot, norm, GradVector, WeightVector};

/// Step used by every finite-difference oracle.
pub const FD_STEP: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    /// Measured error in the units the tolerance applies to.
    pub error: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub detail: String,
}

impl CheckOutcome {
    fn new(name: &'static str, error: f64, tolerance: f64, detail: String) -> Self {
        Self {
            name,
            error,
            tolerance,
            passed: error <= tolerance,
            detail,
        }
    }

    fn skipped(name: &'static str, detail: String) -> Self {
        Self {
            name,
            error: 0.0,
            tolerance: 0.0,
            passed: true,
            detail,
        }
    }
}

fn shifted(w: &WeightVector, direction: &[f64], step: f64) -> WeightVector {
    let mut x = w.clone();
    axpy(step, direction, x.as_mut_slice());
    x
}

/// Central differences `(L(w + h e_i) - L(w - h e_i)) / 2h` for every weight.
pub fn fd_gradient<O: Objective + ?Sized>(objective: &O, w: &WeightVector, h: f64) -> Result<Vec<f64>, AutodiffError> {
    let mut out = Vec::with_capacity(w.len());
    let mut e = vec![0.0; w.len()];
    for i in 0..w.len() {
        e[i] = 1.0;
        let lp = record_objective(objective, &shifted(w, &e, h))?.1;
        let lm = record_objective(objective, &shifted(w, &e, -h))?.1;
        e[i] = 0.0;
        out.push((lp - lm) / (2.0 * h));
    }
    Ok(out)
}

/// `(grad L(w + h s) - grad L(w - h s)) / 2h`.
pub fn fd_hvp<O: Objective + ?Sized>(
    objective: &O,
    w: &WeightVector,
    s: &[f64],
    h: f64,
) -> Result<Vec<f64>, AutodiffError> {
    let gp = objective_gradient(objective, &shifted(w, s, h))?;
    let gm = objective_gradient(objective, &shifted(w, s, -h))?;
    Ok(gp
        .as_slice()
        .iter()
        .zip(gm.as_slice())
        .map(|(a, b)| (a - b) / (2.0 * h))
        .collect())
}

fn relative_norm(a: &[f64], b: &[f64]) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

/// Worst componentwise `|g_i - fd_i| / max(|g_i|, |fd_i|, 1)`.
pub fn gradient_check<O: Objective + ?Sized>(
    objective: &O,
    w: &WeightVector,
    tol: f64,
) -> Result<CheckOutcome, AutodiffError> {
    let g = objective_gradient(objective, w)?;
    let fd = fd_gradient(objective, w, FD_STEP)?;
    let (worst, index) = g
        .as_slice()
        .iter()
        .zip(&fd)
        .map(|(a, b)| (a - b).abs() / a.abs().max(b.abs()).max(1.0))
        .enumerate()
        .fold(
            (0.0, 0),
            |(best, bi), (i, e)| if e > best { (e, i) } else { (best, bi) },
        );
    Ok(CheckOutcome::new(
        "gradient vs finite differences",
        worst,
        tol,
        format!("{} components, worst at weight {index}", g.len()),
    ))
}

/// Relative norm error of `H s` against the directional finite difference.
pub fn hvp_check<O: Objective + ?Sized>(
    objective: &O,
    w: &WeightVector,
    s: &[f64],
    tol: f64,
) -> Result<CheckOutcome, AutodiffError> {
    let (mut tape, _) = record_objective(objective, w)?;
    let hs = tape.hvp(s)?;
    let fd = fd_hvp(objective, w, s, FD_STEP)?;
    Ok(CheckOutcome::new(
        "hvp vs finite differences",
        relative_norm(hs.as_slice(), &fd),
        tol,
        format!("|Hs| = {:.3e}", hs.norm()),
    ))
}

/// `|s1'H s2 - s2'H s1|` relative to the larger of the two.
pub fn symmetry_check<O: Objective + ?Sized>(
    objective: &O,
    w: &WeightVector,
    s1: &[f64],
    s2: &[f64],
    tol: f64,
) -> Result<CheckOutcome, AutodiffError> {
    let (mut tape, _) = record_objective(objective, w)?;
    let h1 = tape.hvp(s1)?;
    let h2 = tape.hvp(s2)?;
    let a = dot(s1, h2.as_slice());
    let b = dot(s2, h1.as_slice());
    let scale = a.abs().max(b.abs());
    let err = if scale == 0.0 { 0.0 } else { (a - b).abs() / scale };
    Ok(CheckOutcome::new(
        "hvp symmetry",
        err,
        tol,
        format!("s1'Hs2 = {a:.6e}, s2'Hs1 = {b:.6e}"),
    ))
}

/// `H(a s1 + b s2)` against `a H s1 + b H s2`.
pub fn linearity_check<O: Objective + ?Sized>(
    objective: &O,
    w: &WeightVector,
    (a, s1): (f64, &[f64]),
    (b, s2): (f64, &[f64]),
    tol: f64,
) -> Result<CheckOutcome, AutodiffError> {
    let (mut tape, _) = record_objective(objective, w)?;
    let h1 = tape.hvp(s1)?.into_vec();
    let h2 = tape.hvp(s2)?.into_vec();
    let combo: Vec<f64> = s1.iter().zip(s2).map(|(x, y)| a * x + b * y).collect();
    let hc = tape.hvp(&combo)?.into_vec();
    let expected: Vec<f64> = h1.iter().zip(&h2).map(|(x, y)| a * x + b * y).collect();
    let diff: Vec<f64> = hc.iter().zip(&expected).map(|(x, y)| x - y).collect();
    let scale = norm(&expected).max(norm(&h1).max(norm(&h2)) * a.abs().max(b.abs()));
    let err = if scale == 0.0 { 0.0 } else { norm(&diff) / scale };
    Ok(CheckOutcome::new(
        "hvp linearity",
        err,
        tol,
        format!("a = {a:.3}, b = {b:.3}"),
    ))
}

/// Dense Hessian from `n` Hessian-vector products, symmetrised.
pub fn dense_hessian<O: Objective + ?Sized>(objective: &O, w: &WeightVector) -> Result<DMatrix<f64>, AutodiffError> {
    let n = w.len();
    let (mut tape, _) = record_objective(objective, w)?;
    let mut h = DMatrix::zeros(n, n);
    let mut e = vec![0.0; n];
    for j in 0..n {
        e[j] = 1.0;
        let col = tape.hvp(&e)?;
        e[j] = 0.0;
        for (i, v) in col.as_slice().iter().enumerate() {
            h[(i, j)] = *v;
        }
    }
    Ok((&h + h.transpose()) * 0.5)
}

/// Largest system the dense-solve comparison is run on.
pub const DENSE_LIMIT: usize = 50;

/// CG on `(H + tau I) p = -g` against a Cholesky solve of the same system.
/// `tau` is raised tenfold until the dense matrix factors, so the
/// comparison always runs on an SPD system. Skipped above [`DENSE_LIMIT`].
pub fn cg_dense_check<O: Objective + ?Sized>(
    objective: &O,
    w: &WeightVector,
    tau: f64,
    tol: f64,
) -> Result<CheckOutcome, OptimError> {
    const NAME: &str = "cg vs dense solve";
    let n = w.len();
    if n > DENSE_LIMIT {
        return Ok(CheckOutcome::skipped(NAME, format!("skipped: n = {n} > {DENSE_LIMIT}")));
    }
    let h = dense_hessian(objective, w)?;
    let g = objective_gradient(objective, w)?;
    let rhs: Vec<f64> = g.as_slice().iter().map(|v| -v).collect();
    let mut tau = tau.max(1e-8);
    let chol = loop {
        let shifted = &h + DMatrix::identity(n, n) * tau;
        if let Some(c) = shifted.cholesky() {
            break c;
        }
        tau *= 10.0;
    };
    let dense = chol.solve(&DVector::from_column_slice(&rhs));
    let (mut tape, _) = record_objective(objective, w)?;
    let cg = cg_solve(
        |v: &[f64]| {
            let mut hv = tape.hvp(v)?.into_vec();
            axpy(tau, v, &mut hv);
            Ok(hv)
        },
        &rhs,
        1e-12,
        10 * n.max(1),
    )?;
    let err = relative_norm(&cg.solution, dense.as_slice());
    Ok(CheckOutcome::new(
        NAME,
        err,
        tol,
        format!(
            "n = {n}, tau = {tau:.1e}, {} iterations, {}",
            cg.iterations, cg.termination
        ),
    ))
}

/// Closed-form `H s` for a single-layer identity network under squared error:
/// with `A = [X 1]`, output `j` has Hessian block `2 A'A` and outputs do not
/// interact.
pub fn linear_network_hvp(network: &Network, batch: &Batch, s: &[f64]) -> Vec<f64> {
    assert!(
        network.layers().len() == 1
            && network.layers()[0].activation == Activation::Identity
            && network.loss_kind() == LossKind::SumSquaredError,
        "closed form needs a single identity layer with squared error"
    );
    let d = network.input_dim();
    let m = network.output_dim();
    let x = batch.features();
    let a = |r: usize, i: usize| if i < d { x.get(r, i) } else { 1.0 };
    let mut out = vec![0.0; s.len()];
    for r in 0..batch.len() {
        for j in 0..m {
            let proj: f64 = (0..=d).map(|k| a(r, k) * s[k * m + j]).sum();
            for i in 0..=d {
                out[i * m + j] += 2.0 * a(r, i) * proj;
            }
        }
    }
    out
}

/// HVP of a linear least-squares network against [`linear_network_hvp`].
pub fn quadratic_network_check(
    network: &Network,
    w: &WeightVector,
    batch: &Batch,
    s: &[f64],
    tol: f64,
) -> Result<CheckOutcome, AutodiffError> {
    let hs = crate::autodiff::hvp(network, w, batch, &GradVector::new(s.to_vec()))?;
    let exact = linear_network_hvp(network, batch, s);
    Ok(CheckOutcome::new(
        "hvp vs analytic quadratic",
        relative_norm(hs.as_slice(), &exact),
        tol,
        format!("n = {}", w.len()),
    ))
}

fn random_direction(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Tolerances of the verification suite.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CheckTolerances {
    pub gradient: f64,
    pub hvp: f64,
    pub symmetry: f64,
    pub linearity: f64,
    pub cg_dense: f64,
    pub quadratic: f64,
}

impl Default for CheckTolerances {
    fn default() -> Self {
        Self {
            gradient: 1e-6,
            hvp: 1e-5,
            symmetry: 1e-10,
            linearity: 1e-10,
            cg_dense: 1e-6,
            quadratic: 1e-12,
        }
    }
}

/// Gradient, HVP, symmetry, linearity and CG checks for `network` at
/// `weights` on `batch`, plus the closed-form check on a two-weight linear
/// network. Directions are drawn from `seed`.
pub fn run_checks(
    network: &Network,
    weights: &WeightVector,
    batch: &Batch,
    tau: f64,
    seed: u64,
    tol: &CheckTolerances,
) -> Result<Vec<CheckOutcome>, OptimError> {
    let objective = NetworkLoss::new(network, batch);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = weights.len();
    let s1 = random_direction(&mut rng, n);
    let s2 = random_direction(&mut rng, n);
    let a = rng.random_range(-2.0..2.0);
    let b = rng.random_range(-2.0..2.0);
    let mut out = vec![
        gradient_check(&objective, weights, tol.gradient)?,
        hvp_check(&objective, weights, &s1, tol.hvp)?,
        symmetry_check(&objective, weights, &s1, &s2, tol.symmetry)?,
        linearity_check(&objective, weights, (a, &s1), (b, &s2), tol.linearity)?,
        cg_dense_check(&objective, weights, tau, tol.cg_dense)?,
    ];

    let (lin, lin_w, lin_batch) = two_weight_problem(&mut rng);
    let s = random_direction(&mut rng, 2);
    out.push(quadratic_network_check(&lin, &lin_w, &lin_batch, &s, tol.quadratic)?);
    Ok(out)
}

/// `y = w x + b` under squared error with random data: `n = 2`.
fn two_weight_problem(rng: &mut ChaCha8Rng) -> (Network, WeightVector, Batch) {
    let net = Network::build_mlp(
        1,
        vec![crate::network::LayerSpec::new(1, Activation::Identity)],
        LossKind::SumSquaredError,
    )
    .expect("valid architecture");
    let rows = 5;
    let x = crate::autodiff::Matrix::from_vec(rows, 1, random_direction(rng, rows));
    let y = crate::autodiff::Matrix::from_vec(rows, 1, random_direction(rng, rows));
    let w = WeightVector::new(random_direction(rng, 2));
    (net, w, Batch::new(x, y).expect("rows match"))
}

/// Error history of repeated Newton-CG steps against a reference optimum.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceProfile {
    /// `|W_k - W*|` for `k = 0..=steps`; only the last iterate meets the
    /// gradient tolerance.
    pub errors: Vec<f64>,
    /// `errors[k + 1] / errors[k]`, one per step taken.
    pub ratios: Vec<f64>,
    /// Steps taken until `|grad| <= grad_tol`.
    pub steps: usize,
    /// Steps of the reference run that produced `W*`.
    pub reference_steps: usize,
}

impl ConvergenceProfile {
    /// The last `window` ratios strictly decrease and the final one is below
    /// `bound`.
    pub fn is_superlinear(&self, window: usize, bound: f64) -> bool {
        if self.ratios.len() < window || window == 0 {
            return false;
        }
        let tail = &self.ratios[self.ratios.len() - window..];
        tail.windows(2).all(|p| p[1] < p[0]) && tail[window - 1] < bound
    }
}

/// Runs Newton-CG from `w0` until `|grad| <= grad_tol` (at most `max_steps`),
/// then reruns it for ten times as many steps to obtain `W*`, and reports the
/// error ratios of the first run.
pub fn newton_convergence_profile<O: Objective + ?Sized>(
    objective: &O,
    w0: &WeightVector,
    config: &NewtonCgConfig,
    grad_tol: f64,
    max_steps: usize,
) -> Result<ConvergenceProfile, OptimError> {
    let mut iterates = vec![w0.clone()];
    let mut w = w0.clone();
    while iterates.len() <= max_steps {
        if objective_gradient(objective, &w)?.norm() <= grad_tol {
            break;
        }
        w = newton_cg_step(objective, &w, config)?.0;
        iterates.push(w.clone());
    }
    // the last iterate met the tolerance (or exhausted the budget)
    let steps = iterates.len() - 1;
    let reference_steps = 10 * steps.max(1);
    let mut w_star = w0.clone();
    for _ in 0..reference_steps {
        w_star = newton_cg_step(objective, &w_star, config)?.0;
    }
    let errors: Vec<f64> = iterates
        .iter()
        .map(|it| {
            let d: Vec<f64> = it
                .as_slice()
                .iter()
                .zip(w_star.as_slice())
                .map(|(a, b)| a - b)
                .collect();
            norm(&d)
        })
        .collect();
    let ratios = errors.windows(2).map(|p| p[1] / p[0]).collect();
    Ok(ConvergenceProfile {
        errors,
        ratios,
        steps,
        reference_steps,
    })
}
