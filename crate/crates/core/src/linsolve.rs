//! Matrix-free conjugate gradients.
//!
//! The operator is only ever touched through a matvec callback, so the
//! Newton system `(H + tau I) p = -g` can be solved with Hessian-vector
//! products alone.

use std::fmt;

use thiserror::Error;

use crate::vector::{axpy, dot, norm};

/// Curvature `d'Ad <= NEGATIVE_CURVATURE_EPS * |d|^2` stops the solve.
pub const NEGATIVE_CURVATURE_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Termination {
    ToleranceMet,
    MaxIterations,
    NegativeCurvature,
    ZeroRhs,
}

impl Termination {
    pub fn name(self) -> &'static str {
        match self {
            Termination::ToleranceMet => "tolerance_met",
            Termination::MaxIterations => "max_iterations",
            Termination::NegativeCurvature => "negative_curvature",
            Termination::ZeroRhs => "zero_rhs",
        }
    }
}

impl fmt::Display for Termination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CgResult {
    pub solution: Vec<f64>,
    /// Number of matvec applications.
    pub iterations: usize,
    pub residual_norm: f64,
    pub termination: Termination,
}

#[derive(Debug, Error)]
pub enum CgError<E> {
    #[error("invalid solver input: {0}")]
    InvalidInput(String),
    #[error("non-finite value in conjugate gradient at iteration {iteration}")]
    NonFinite { iteration: usize },
    #[error("matvec failed at iteration {iteration}: {source}")]
    Operator {
        iteration: usize,
        #[source]
        source: E,
    },
}

/// Solves `A x = b` from `x0 = 0`.
///
/// Stops when `|r| <= tol * |b|`, after `max_iter` matvecs, or when a search
/// direction has curvature `d'Ad <= 1e-12 |d|^2`. On that last condition the
/// current iterate is returned; if no step has been taken yet, the iterate is
/// the first CG step `(r'r / d'Ad) d` (zero when the curvature is exactly 0),
/// which leaves the caller's feasibility test to judge it.
pub fn cg_solve<F, E>(mut matvec: F, b: &[f64], tol: f64, max_iter: usize) -> Result<CgResult, CgError<E>>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>, E>,
{
    if !(tol > 0.0 && tol.is_finite()) {
        return Err(CgError::InvalidInput(format!("tolerance must be positive, got {tol}")));
    }
    if max_iter == 0 {
        return Err(CgError::InvalidInput("max_iter must be at least 1".into()));
    }
    if b.iter().any(|v| !v.is_finite()) {
        return Err(CgError::NonFinite { iteration: 0 });
    }
    let n = b.len();
    let b_norm = norm(b);
    if b_norm == 0.0 {
        return Ok(CgResult {
            solution: vec![0.0; n],
            iterations: 0,
            residual_norm: 0.0,
            termination: Termination::ZeroRhs,
        });
    }

    let target = tol * b_norm;
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut d = r.clone();
    let mut rr = dot(&r, &r);

    for iteration in 1..=max_iter {
        let ad = matvec(&d).map_err(|source| CgError::Operator { iteration, source })?;
        if ad.len() != n {
            return Err(CgError::InvalidInput(format!(
                "matvec returned {} entries for a system of size {n}",
                ad.len()
            )));
        }
        let curvature = dot(&d, &ad);
        if !curvature.is_finite() {
            return Err(CgError::NonFinite { iteration });
        }
        if curvature <= NEGATIVE_CURVATURE_EPS * dot(&d, &d) {
            if iteration == 1 && curvature != 0.0 {
                axpy(rr / curvature, &d, &mut x);
            }
            return Ok(CgResult {
                solution: x,
                iterations: iteration,
                residual_norm: rr.sqrt(),
                termination: Termination::NegativeCurvature,
            });
        }
        let alpha = rr / curvature;
        axpy(alpha, &d, &mut x);
        axpy(-alpha, &ad, &mut r);
        let rr_next = dot(&r, &r);
        if !rr_next.is_finite() || x.iter().any(|v| !v.is_finite()) {
            return Err(CgError::NonFinite { iteration });
        }
        if rr_next.sqrt() <= target {
            return Ok(CgResult {
                solution: x,
                iterations: iteration,
                residual_norm: rr_next.sqrt(),
                termination: Termination::ToleranceMet,
            });
        }
        let beta = rr_next / rr;
        for (di, &ri) in d.iter_mut().zip(&r) {
            *di = ri + beta * *di;
        }
        rr = rr_next;
    }

    Ok(CgResult {
        solution: x,
        iterations: max_iter,
        residual_norm: rr.sqrt(),
        termination: Termination::MaxIterations,
    })
}

/// [`cg_solve`] for callbacks that cannot fail.
pub fn cg_solve_infallible<F>(
    mut matvec: F,
    b: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<CgResult, CgError<std::convert::Infallible>>
where
    F: FnMut(&[f64]) -> Vec<f64>,
{
    cg_solve(|v| Ok(matvec(v)), b, tol, max_iter)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn dense_matvec(a: &DMatrix<f64>) -> impl FnMut(&[f64]) -> Vec<f64> + '_ {
        move |v| (a * DVector::from_column_slice(v)).as_slice().to_vec()
    }

    /// `M'M + I` with `M` entries drawn from N(0, 1/n).
    fn random_spd(seed: u64, n: usize) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = (n as f64).sqrt().recip();
        let m = DMatrix::from_fn(n, n, |_, _| scale * rng.sample::<f64, _>(StandardNormal));
        m.transpose() * &m + DMatrix::identity(n, n)
    }

    #[test]
    fn identity_solves_in_one_iteration() {
        let res = cg_solve_infallible(|v| v.to_vec(), &[5.0, -3.0], 1e-8, 10).unwrap();
        assert_eq!(res.solution, vec![5.0, -3.0]);
        assert_eq!(res.iterations, 1);
        assert_eq!(res.termination, Termination::ToleranceMet);
    }

    #[test]
    fn diagonal_system() {
        let res = cg_solve_infallible(|v| vec![v[0], 2.0 * v[1]], &[1.0, 2.0], 1e-12, 10).unwrap();
        assert!((res.solution[0] - 1.0).abs() < 1e-14);
        assert!((res.solution[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn random_spd_against_dense_factorisation() {
        let a = random_spd(3, 20);
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let b: Vec<f64> = (0..20).map(|_| rng.random_range(-1.0..1.0)).collect();
        let res = cg_solve_infallible(dense_matvec(&a), &b, 1e-10, 20).unwrap();
        let b_norm = norm(&b);
        assert!(res.iterations <= 20);
        // the reported residual is the recursive one; check the true residual too
        let ax = &a * DVector::from_column_slice(&res.solution);
        let true_res = (ax - DVector::from_column_slice(&b)).norm();
        assert!(
            res.residual_norm <= 1e-10 * b_norm,
            "{} after {}",
            res.residual_norm,
            res.iterations
        );
        assert!(true_res <= 1e-9 * b_norm);
        let exact = a.cholesky().unwrap().solve(&DVector::from_column_slice(&b));
        let err = (DVector::from_column_slice(&res.solution) - &exact).norm() / exact.norm();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn zero_rhs_returns_exact_zero() {
        let mut calls = 0;
        let res = cg_solve_infallible(
            |v| {
                calls += 1;
                v.to_vec()
            },
            &[0.0; 4],
            1e-6,
            5,
        )
        .unwrap();
        assert_eq!(res.termination, Termination::ZeroRhs);
        assert_eq!(res.solution, vec![0.0; 4]);
        assert_eq!(res.iterations, 0);
        assert_eq!(calls, 0);
    }

    #[test]
    fn negative_curvature_truncates() {
        let res = cg_solve_infallible(|v| v.iter().map(|x| -x).collect(), &[1.0, 2.0], 1e-8, 10).unwrap();
        assert_eq!(res.termination, Termination::NegativeCurvature);
        assert_eq!(res.iterations, 1);
        // first CG iterate of A = -I is -b
        assert_eq!(res.solution, vec![-1.0, -2.0]);

        let res = cg_solve_infallible(|v| vec![0.0; v.len()], &[1.0, 2.0], 1e-8, 10).unwrap();
        assert_eq!(res.termination, Termination::NegativeCurvature);
        assert_eq!(res.solution, vec![0.0, 0.0]);
    }

    #[test]
    fn max_iterations_is_reported() {
        let a = random_spd(8, 30);
        let b = vec![1.0; 30];
        let res = cg_solve_infallible(dense_matvec(&a), &b, 1e-14, 3).unwrap();
        assert_eq!(res.iterations, 3);
        assert_eq!(res.termination, Termination::MaxIterations);
    }

    #[test]
    fn errors() {
        assert!(matches!(
            cg_solve_infallible(|v| v.to_vec(), &[1.0], 0.0, 3),
            Err(CgError::InvalidInput(_))
        ));
        assert!(matches!(
            cg_solve_infallible(|v| v.to_vec(), &[1.0], 1e-3, 0),
            Err(CgError::InvalidInput(_))
        ));
        assert!(matches!(
            cg_solve_infallible(|v| vec![f64::NAN; v.len()], &[1.0], 1e-3, 3),
            Err(CgError::NonFinite { iteration: 1 })
        ));
        let err = cg_solve(|_| Err::<Vec<f64>, _>("boom"), &[1.0], 1e-3, 3).unwrap_err();
        assert!(err.to_string().contains("iteration 1"));
    }

    #[test]
    fn tikhonov_system_matches_dense_solve() {
        let n = 12;
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        // symmetric indefinite H, shifted to be SPD by tau
        let m: DMatrix<f64> = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let h = (&m + m.transpose()) * 0.5;
        let tau: f64 = h.symmetric_eigenvalues().min().abs() + 0.5;
        let g: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let rhs: Vec<f64> = g.iter().map(|v| -v).collect();
        let res = cg_solve_infallible(
            |v| {
                let hv = &h * DVector::from_column_slice(v);
                hv.iter().zip(v).map(|(a, b)| a + tau * b).collect()
            },
            &rhs,
            1e-12,
            10 * n,
        )
        .unwrap();
        let shifted = &h + DMatrix::identity(n, n) * tau;
        let exact = shifted.lu().solve(&DVector::from_column_slice(&rhs)).unwrap();
        let err = (DVector::from_column_slice(&res.solution) - &exact).norm() / exact.norm();
        assert!(err < 1e-9, "{err}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn a_norm_error_is_monotone(seed in 0u64..1000, n in 2usize..16) {
            let a = random_spd(seed, n);
            let b: Vec<f64> = (0..n).map(|i| ((i as f64) * 0.7 + seed as f64).sin()).collect();
            let exact = a.clone().cholesky().unwrap().solve(&DVector::from_column_slice(&b));
            let mut prev = f64::INFINITY;
            for k in 1..=n {
                let res = cg_solve_infallible(dense_matvec(&a), &b, 1e-15, k).unwrap();
                let e = DVector::from_column_slice(&res.solution) - &exact;
                let a_norm = e.dot(&(&a * &e)).max(0.0).sqrt();
                prop_assert!(a_norm <= prev * (1.0 + 1e-9) + 1e-12);
                prev = a_norm;
                if res.termination != Termination::MaxIterations {
                    break;
                }
            }
        }
    }
}
