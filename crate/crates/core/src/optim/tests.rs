use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::*;
use crate::autodiff::{objective_gradient, reverse_sweep_count, Matrix, Quadratic};
use crate::linsolve::Termination;
use crate::network::{Activation, Batch, LayerSpec, LossKind, Network, NetworkLoss};
use crate::vector::{dot, norm, GradVector, WeightVector};

fn wv(v: &[f64]) -> WeightVector {
    WeightVector::new(v.to_vec())
}

fn gv(v: &[f64]) -> GradVector {
    GradVector::new(v.to_vec())
}

fn newton(alpha: f64, tau: f64, cg_tol: f64, max_iter: usize) -> NewtonCgConfig {
    NewtonCgConfig {
        learning_rate: alpha,
        tau,
        cg_tol,
        max_iter,
    }
}

fn small_mlp(seed: u64) -> (Network, WeightVector, Batch) {
    let net = Network::build_mlp(
        4,
        vec![
            LayerSpec::new(6, Activation::Tanh),
            LayerSpec::new(2, Activation::Identity),
        ],
        LossKind::SumSquaredError,
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fill =
        |r: usize, c: usize| Matrix::from_vec(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect());
    let batch = Batch::new(fill(8, 4), fill(8, 2)).unwrap();
    let w = net.init_weights(seed);
    (net, w, batch)
}

#[test]
fn sgd_examples() {
    assert_eq!(
        sgd_step(&wv(&[1.0, 1.0]), &gv(&[1.0, -1.0]), 0.1).as_slice(),
        &[0.9, 1.1]
    );
    let w = wv(&[0.3, -7.0]);
    assert_eq!(sgd_step(&w, &gv(&[0.0, 0.0]), 0.5), w);

    let q = Quadratic::scaled_identity(3, 1.0);
    let mut opt = Optimizer::new(OptimizerConfig::Sgd(SgdConfig { learning_rate: 1.0 }), 3).unwrap();
    let (next, report) = opt.step(&q, &wv(&[1.5, -2.0, 4.0])).unwrap();
    assert_eq!(next.as_slice(), &[0.0, 0.0, 0.0]);
    assert_eq!(report.cg_iterations, 0);
    assert_eq!(report.cg_termination, None);
    assert_eq!(report.reverse_sweeps, 1);
}

#[test]
fn sgd_displacement_scales_with_learning_rate() {
    let w = wv(&[0.25, -1.0, 3.0]);
    let g = gv(&[0.5, 0.125, -2.0]);
    let d1: Vec<f64> = sgd_step(&w, &g, 0.25)
        .as_slice()
        .iter()
        .zip(w.as_slice())
        .map(|(a, b)| a - b)
        .collect();
    let d2: Vec<f64> = sgd_step(&w, &g, 0.5)
        .as_slice()
        .iter()
        .zip(w.as_slice())
        .map(|(a, b)| a - b)
        .collect();
    for (a, b) in d1.iter().zip(&d2) {
        assert_eq!(2.0 * a, *b);
    }
}

#[test]
fn adam_first_step() {
    let config = AdamConfig::default();
    let (state, w) = adam_step(&AdamState::new(1), &config, &wv(&[0.0]), &gv(&[1.0]));
    assert_eq!(state.k, 1);
    let expected = -0.001 * 1.0 / (1e-8 + 1.0);
    assert!((w.as_slice()[0] - expected).abs() < 1e-18);
    assert!((w.as_slice()[0] + 9.99999990e-4).abs() < 1e-15);
}

#[test]
fn adam_zero_gradient_keeps_weights() {
    let w = wv(&[1.0, -2.0]);
    let (state, next) = adam_step(&AdamState::new(2), &AdamConfig::default(), &w, &gv(&[0.0, 0.0]));
    assert_eq!(next, w);
    assert_eq!(state.s, vec![0.0, 0.0]);
    assert_eq!(state.r, vec![0.0, 0.0]);
    assert_eq!(state.k, 1);
}

#[test]
fn adam_constant_gradient_steps() {
    let config = AdamConfig::default();
    for c in [1.0, -3.0, 100.0, 1e-3] {
        let mut state = AdamState::new(1);
        let mut w = wv(&[0.0]);
        for _ in 0..50 {
            let (next_state, next) = adam_step(&state, &config, &w, &gv(&[c]));
            let step = next.as_slice()[0] - w.as_slice()[0];
            let expected = -config.learning_rate * c / (config.delta + c.abs());
            assert!((step - expected).abs() <= 1e-12 * config.learning_rate, "c={c}");
            // invariant to the gradient scale up to delta terms
            assert!((step.abs() - config.learning_rate).abs() <= config.learning_rate * 1e-5 + 1e-12);
            assert!(next_state.r.iter().all(|&r| r >= 0.0));
            state = next_state;
            w = next;
        }
        assert_eq!(state.k, 50);
    }
}

#[test]
fn adam_state_mean_of_equal_states_is_exact() {
    let st = AdamState {
        s: vec![0.1, 0.7, -3.3],
        r: vec![0.01, 0.49, 10.89],
        k: 4,
    };
    let mean = AdamState::mean(&[&st, &st, &st, &st]);
    assert_eq!(mean, st);
}

#[test]
fn feasibility_examples() {
    assert_eq!(feasibility_check(&[1.0, 0.0], &[0.0, 1.0], 0.5), vec![0.0, 1.0]);
    assert_eq!(feasibility_check(&[1.0, 0.0], &[1.0, 0.0], 0.5), vec![-1.0, 0.0]);
    let g = [0.3, -2.0, 5.0];
    let p: Vec<f64> = g.iter().map(|v| -v).collect();
    for tau in [0.0, 0.5, 1e6] {
        assert_eq!(feasibility_check(&g, &p, tau), p);
    }
}

proptest! {
    #[test]
    fn feasibility_result_passes_descent_test(
        g in prop::collection::vec(-10.0f64..10.0, 1..8),
        seed in 0u64..1000,
        tau in 0.0f64..5.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p: Vec<f64> = g.iter().map(|_| rng.random_range(-10.0..10.0)).collect();
        let out = feasibility_check(&g, &p, tau);
        prop_assert!(dot(&g, &out) <= tau);
    }
}

#[test]
fn newton_solves_isotropic_quadratic() {
    let q = Quadratic::scaled_identity(2, 1.0);
    let (next, report) = newton_cg_step(&q, &wv(&[4.0, -2.0]), &newton(1.0, 0.0, 1e-10, 20)).unwrap();
    assert_eq!(next.as_slice(), &[0.0, 0.0]);
    assert!(!report.fallback_used);
    assert_eq!(report.cg_iterations, 1);
    assert_eq!(report.cg_termination, Some(Termination::ToleranceMet));
    assert_eq!(report.direction_dot_grad, -20.0);
}

#[test]
fn newton_lands_on_minimizer_of_convex_quadratic() {
    let n = 30;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let m = DMatrix::<f64>::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal) / (n as f64).sqrt());
    let a = m.transpose() * &m + DMatrix::identity(n, n);
    let b: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let q = Quadratic::new(Matrix::from_vec(n, n, a.transpose().as_slice().to_vec())).with_linear(b.clone());
    let w0: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
    let (next, report) = newton_cg_step(&q, &wv(&w0), &newton(1.0, 0.0, 1e-12, 100)).unwrap();
    let w_star = a.cholesky().unwrap().solve(&(-DVector::from_vec(b)));
    let err = (DVector::from_vec(next.into_vec()) - w_star).norm();
    assert!(err <= 1e-8, "error {err}");
    assert!(!report.fallback_used);
}

#[test]
fn large_tau_gives_scaled_negative_gradient() {
    let (net, w, batch) = small_mlp(5);
    let loss = NetworkLoss::new(&net, &batch);
    let tau = 1e6;
    let (delta, report) = newton_cg_update(&loss, &w, &newton(0.5, tau, 1e-10, 20)).unwrap();
    let g = objective_gradient(&loss, &w).unwrap();
    let p: Vec<f64> = delta.iter().map(|d| d / 0.5).collect();
    let diff: Vec<f64> = p.iter().zip(g.as_slice()).map(|(p, g)| p + g / tau).collect();
    assert!(
        norm(&diff) <= 1e-3 * g.norm() / tau,
        "{} vs {}",
        norm(&diff),
        g.norm() / tau
    );
    assert!(!report.fallback_used);
}

#[test]
fn concave_quadratic_falls_back_to_negative_gradient() {
    let q = Quadratic::scaled_identity(3, -1.0);
    let w = wv(&[1.0, -2.0, 0.5]);
    let alpha = 0.1;
    let (next, report) = newton_cg_step(&q, &w, &newton(alpha, 0.0, 1e-8, 20)).unwrap();
    assert!(report.fallback_used);
    assert_eq!(report.cg_termination, Some(Termination::NegativeCurvature));
    // gradient of -0.5|w|^2 is -w, so the fallback step is W + alpha * w
    for (n, o) in next.as_slice().iter().zip(w.as_slice()) {
        assert_eq!(*n, o + alpha * o);
    }
    assert!(report.direction_dot_grad <= 0.0);
}

#[test]
fn newton_sweep_accounting() {
    let (net, w, batch) = small_mlp(9);
    let loss = NetworkLoss::new(&net, &batch);
    for (tau, max_iter) in [(1.0, 20), (0.1, 3), (10.0, 1)] {
        let before = reverse_sweep_count();
        let (_, report) = newton_cg_step(&loss, &w, &newton(0.01, tau, 1e-6, max_iter)).unwrap();
        let used = reverse_sweep_count() - before;
        assert!(report.cg_iterations >= 1);
        assert_eq!(used, 1 + 2 * report.cg_iterations as u64);
        assert_eq!(report.reverse_sweeps, used);
    }
}

#[test]
fn zero_gradient_leaves_weights_unchanged() {
    let q = Quadratic::scaled_identity(3, 2.0);
    let w = wv(&[0.0, 0.0, 0.0]);
    let (next, report) = newton_cg_step(&q, &w, &NewtonCgConfig::default()).unwrap();
    assert_eq!(next, w);
    assert_eq!(report.cg_iterations, 0);
    assert_eq!(report.grad_norm, 0.0);
    assert_eq!(report.reverse_sweeps, 1);
}

#[test]
fn invalid_configs_are_rejected() {
    let bad = [
        newton(0.0, 1.0, 1e-4, 20),
        newton(0.01, -1.0, 1e-4, 20),
        newton(0.01, 1.0, 0.0, 20),
        newton(0.01, 1.0, 1e-4, 0),
        newton(f64::NAN, 1.0, 1e-4, 20),
    ];
    for c in bad {
        assert!(matches!(c.validate(), Err(OptimError::Config(_))), "{c:?}");
    }
    assert!(NewtonCgConfig::default().validate().is_ok());
    let adam = AdamConfig {
        beta1: 1.0,
        ..AdamConfig::default()
    };
    assert!(adam.validate().is_err());
    assert!(AdamConfig {
        delta: 0.0,
        ..AdamConfig::default()
    }
    .validate()
    .is_err());
    assert!(SgdConfig { learning_rate: -1.0 }.validate().is_err());
}

#[test]
fn optimizer_step_matches_free_functions() {
    let (net, w, batch) = small_mlp(3);
    let loss = NetworkLoss::new(&net, &batch);
    let g = objective_gradient(&loss, &w).unwrap();

    let mut sgd = Optimizer::new(OptimizerConfig::Sgd(SgdConfig { learning_rate: 0.05 }), w.len()).unwrap();
    assert_eq!(sgd.step(&loss, &w).unwrap().0, sgd_step(&w, &g, 0.05));

    let config = AdamConfig::default();
    let mut adam = Optimizer::new(OptimizerConfig::Adam(config), w.len()).unwrap();
    let (w1, _) = adam.step(&loss, &w).unwrap();
    let (st, w1_ref) = adam_step(&AdamState::new(w.len()), &config, &w, &g);
    assert_eq!(w1, w1_ref);
    assert_eq!(adam.state(), &OptimizerState::Adam(st));

    let nc = NewtonCgConfig::default();
    let mut opt = Optimizer::new(OptimizerConfig::NewtonCg(nc), w.len()).unwrap();
    assert_eq!(
        opt.step(&loss, &w).unwrap().0,
        newton_cg_step(&loss, &w, &nc).unwrap().0
    );
}
