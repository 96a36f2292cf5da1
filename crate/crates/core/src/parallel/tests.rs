use super::*;
use crate::autodiff::{objective_gradient, Matrix};
use crate::data::{epoch_batches, synth_classification, synth_regression};
use crate::network::{Activation, LayerSpec, LossKind};
use crate::optim::{newton_cg_step, sgd_step, AdamConfig, NewtonCgConfig, OptimizerConfig, SgdConfig};
use crate::vector::{norm, GradVector};

fn regression_setup() -> (Network, WeightVector, Vec<Batch>) {
    let ds = synth_regression(17, 64, 3, 0.1).unwrap();
    let net = Network::build_mlp(
        3,
        vec![
            LayerSpec::new(8, Activation::Tanh),
            LayerSpec::new(1, Activation::Identity),
        ],
        LossKind::SumSquaredError,
    )
    .unwrap();
    let w = net.init_weights(2);
    (net, w, epoch_batches(&ds, 16, 0, 5, true))
}

fn configs() -> Vec<OptimizerConfig> {
    vec![
        OptimizerConfig::Sgd(SgdConfig { learning_rate: 0.01 }),
        OptimizerConfig::Adam(AdamConfig::default()),
        OptimizerConfig::NewtonCg(NewtonCgConfig::default()),
    ]
}

fn plan(k: usize) -> ParallelPlan {
    ParallelPlan::new(k, Reduction::Mean, 16).unwrap()
}

#[test]
fn single_worker_matches_direct_step() {
    let (net, w, batches) = regression_setup();
    let config = NewtonCgConfig::default();
    let mut opt = Optimizer::new(OptimizerConfig::NewtonCg(config), w.len()).unwrap();
    let (par, reports) = parallel_step(&net, &w, &batches[..1], &mut opt, &plan(1)).unwrap();
    let (direct, report) = newton_cg_step(&NetworkLoss::new(&net, &batches[0]), &w, &config).unwrap();
    assert_eq!(par, direct);
    assert_eq!(reports, vec![report]);
}

#[test]
fn identical_batches_match_single_worker_exactly() {
    let (net, w, batches) = regression_setup();
    for config in configs() {
        let mut single = Optimizer::new(config, w.len()).unwrap();
        let mut quad = single.clone();
        // advance Adam so the state is not trivially zero
        for opt in [&mut single, &mut quad] {
            opt.step(&NetworkLoss::new(&net, &batches[1]), &w).unwrap();
        }
        let (expected, _) = single.step(&NetworkLoss::new(&net, &batches[0]), &w).unwrap();
        let same = vec![batches[0].clone(); 4];
        let (got, reports) = parallel_step(&net, &w, &same, &mut quad, &plan(4)).unwrap();
        assert_eq!(got, expected, "{}", config.name());
        assert_eq!(quad.state(), single.state(), "{}", config.name());
        assert_eq!(reports.len(), 4);
    }
}

#[test]
fn sgd_mean_matches_sequential_gradient_oracle() {
    let (net, w, batches) = regression_setup();
    let lr = 0.01;
    let mut opt = Optimizer::new(OptimizerConfig::Sgd(SgdConfig { learning_rate: lr }), w.len()).unwrap();
    let (got, _) = parallel_step(&net, &w, &batches[..2], &mut opt, &plan(2)).unwrap();
    let g1 = objective_gradient(&NetworkLoss::new(&net, &batches[0]), &w).unwrap();
    let g2 = objective_gradient(&NetworkLoss::new(&net, &batches[1]), &w).unwrap();
    for i in 0..w.len() {
        let expected = w.as_slice()[i] - lr * (g1.as_slice()[i] + g2.as_slice()[i]) / 2.0;
        let got = got.as_slice()[i];
        assert!(
            (got - expected).abs() <= 1e-12 * expected.abs().max(1.0),
            "{i}: {got} vs {expected}"
        );
    }

    // k = 4 against sgd_step with the averaged gradient
    let mut opt = Optimizer::new(OptimizerConfig::Sgd(SgdConfig { learning_rate: lr }), w.len()).unwrap();
    let (got, _) = parallel_step(&net, &w, &batches[..4], &mut opt, &plan(4)).unwrap();
    let grads: Vec<GradVector> = batches[..4]
        .iter()
        .map(|b| objective_gradient(&NetworkLoss::new(&net, b), &w).unwrap())
        .collect();
    let avg: Vec<f64> = (0..w.len())
        .map(|i| grads.iter().map(|g| g.as_slice()[i]).sum::<f64>() / 4.0)
        .collect();
    let expected = sgd_step(&w, &GradVector::new(avg), lr);
    let diff: Vec<f64> = got
        .as_slice()
        .iter()
        .zip(expected.as_slice())
        .map(|(a, b)| a - b)
        .collect();
    assert!(norm(&diff) <= 1e-12 * expected.norm());
}

#[test]
fn sum_reduction_adds_updates() {
    let (net, w, batches) = regression_setup();
    let lr = 0.01;
    let config = OptimizerConfig::Sgd(SgdConfig { learning_rate: lr });
    let mut opt = Optimizer::new(config, w.len()).unwrap();
    let sum_plan = ParallelPlan::new(2, Reduction::Sum, 16).unwrap();
    let (got, _) = parallel_step(&net, &w, &batches[..2], &mut opt, &sum_plan).unwrap();
    let g1 = objective_gradient(&NetworkLoss::new(&net, &batches[0]), &w).unwrap();
    let g2 = objective_gradient(&NetworkLoss::new(&net, &batches[1]), &w).unwrap();
    for i in 0..w.len() {
        let expected = w.as_slice()[i] + (-(lr * g1.as_slice()[i]) + -(lr * g2.as_slice()[i]));
        assert_eq!(got.as_slice()[i], expected);
    }
}

#[test]
fn workers_read_the_snapshot() {
    let (net, w, batches) = regression_setup();
    let mut opt = Optimizer::new(OptimizerConfig::NewtonCg(NewtonCgConfig::default()), w.len()).unwrap();
    let (_, reports) = parallel_step(&net, &w, &batches[..4], &mut opt, &plan(4)).unwrap();
    for r in &reports {
        assert_eq!(r.snapshot_hash, w.bit_hash());
        assert_eq!(r.reverse_sweeps, 1 + 2 * r.cg_iterations as u64);
    }
}

#[test]
fn newton_worker_updates_solve_their_own_systems() {
    let (net, w, batches) = regression_setup();
    let config = NewtonCgConfig {
        // the Hessians here reach eigenvalues near -18; damping keeps H + tau I SPD
        tau: 100.0,
        cg_tol: 1e-6,
        max_iter: 200,
        ..NewtonCgConfig::default()
    };
    let mut opt = Optimizer::new(OptimizerConfig::NewtonCg(config), w.len()).unwrap();
    let (got, _) = parallel_step(&net, &w, &batches[..3], &mut opt, &plan(3)).unwrap();
    let mut deltas = Vec::new();
    for b in &batches[..3] {
        let loss = NetworkLoss::new(&net, b);
        let update = opt.compute_update(&loss, &w).unwrap();
        assert_eq!(
            update.report.cg_termination,
            Some(crate::linsolve::Termination::ToleranceMet)
        );
        let p: Vec<f64> = update.delta.iter().map(|d| d / config.learning_rate).collect();
        let g = objective_gradient(&loss, &w).unwrap();
        let hp = crate::autodiff::objective_hvp(&loss, &w, &GradVector::new(p.clone())).unwrap();
        let residual: Vec<f64> = (0..p.len())
            .map(|i| hp.as_slice()[i] + config.tau * p[i] + g.as_slice()[i])
            .collect();
        assert!(
            norm(&residual) <= 1.01 * config.cg_tol * g.norm(),
            "{} vs {}",
            norm(&residual),
            g.norm()
        );
        deltas.push(update.delta);
    }
    assert_eq!(got, apply_delta(&w, &reduce_updates(&deltas, Reduction::Mean)));
}

#[test]
fn repeated_runs_are_bitwise_identical() {
    let (net, w0, batches) = regression_setup();
    let run = || {
        let mut w = w0.clone();
        let mut opt = Optimizer::new(OptimizerConfig::NewtonCg(NewtonCgConfig::default()), w.len()).unwrap();
        for group in batches.chunks(4) {
            w = parallel_step(&net, &w, group, &mut opt, &plan(4)).unwrap().0;
        }
        w
    };
    let a = run();
    let b = run();
    assert_eq!(
        a.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        b.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    );
}

#[test]
fn worker_failure_names_the_worker() {
    let (net, w, batches) = regression_setup();
    let bad = Batch::new(Matrix::zeros(2, 3), Matrix::zeros(2, 2)).unwrap();
    let group = vec![batches[0].clone(), batches[1].clone(), bad];
    let mut opt = Optimizer::new(OptimizerConfig::Sgd(SgdConfig::default()), w.len()).unwrap();
    match parallel_step(&net, &w, &group, &mut opt, &plan(4)) {
        Err(ParallelError::Worker { index, .. }) => assert_eq!(index, 2),
        other => panic!("unexpected {other:?}"),
    }
    assert!(matches!(
        parallel_step(&net, &w, &batches[..3], &mut opt, &plan(2)),
        Err(ParallelError::Plan(_))
    ));
    assert!(ParallelPlan::new(0, Reduction::Mean, 4).is_err());
}

#[test]
fn classification_workers_step() {
    let ds = synth_classification(3, 40, 4, 3).unwrap();
    let net = Network::build_mlp(
        4,
        vec![
            LayerSpec::new(5, Activation::Relu),
            LayerSpec::new(3, Activation::Softmax),
        ],
        LossKind::CrossEntropy,
    )
    .unwrap();
    let w = net.init_weights(1);
    let batches = epoch_batches(&ds, 10, 0, 1, true);
    let mut opt = Optimizer::new(OptimizerConfig::NewtonCg(NewtonCgConfig::default()), w.len()).unwrap();
    let (next, reports) = parallel_step(&net, &w, &batches, &mut opt, &plan(4)).unwrap();
    assert!(next.is_finite());
    assert_eq!(reports.len(), 4);
}

#[test]
fn recorded_runtimes_give_expected_efficiencies() {
    let records = ScalingRecord::from_times(&[(1, 104.0), (2, 60.0), (4, 36.0), (8, 23.0)]).unwrap();
    let shown: Vec<String> = records
        .iter()
        .map(|r| format_efficiency(r.parallel_efficiency))
        .collect();
    assert_eq!(shown, vec!["100%", "86.6%", "72.2%", "56.5%"]);
    assert_eq!(records[0].parallel_efficiency, 1.0);
    assert!((records[1].parallel_efficiency - 104.0 / 120.0).abs() < 1e-15);
    let table = format_table(&records);
    assert!(table.contains("104s") && table.contains("56.5%"), "{table}");
    assert_eq!(table.lines().count(), 3);
}

#[test]
fn efficiency_formatting() {
    assert_eq!(format_efficiency(1.0), "100%");
    assert_eq!(format_efficiency(0.5), "50%");
    assert_eq!(format_efficiency(0.72222), "72.2%");
    assert_eq!(format_efficiency(0.999), "99.9%");
    assert_eq!(efficiency(10.0, 1, 10.0), 1.0);
}

#[test]
fn scaling_csv_layout() {
    let records = ScalingRecord::from_times(&[(1, 2.0), (2, 1.25)]).unwrap();
    assert_eq!(
        scaling_csv(&records),
        "workers,wall_seconds,parallel_efficiency\n1,2,1\n2,1.25,0.8\n"
    );
    assert!(ScalingRecord::from_times(&[(2, 1.0)]).is_err());
}

#[test]
fn small_benchmark_runs() {
    let (net, _, _) = regression_setup();
    let ds = synth_regression(17, 64, 3, 0.1).unwrap();
    let config = OptimizerConfig::NewtonCg(NewtonCgConfig::default());
    let run = run_scaling_benchmark(&net, &ds, config, &[1, 2], 16, 1, 1).unwrap();
    assert_eq!(run.records.len(), 2);
    assert_eq!(run.records[0].parallel_efficiency, 1.0);
    assert!(run.records.iter().all(|r| r.wall_seconds > 0.0));
    assert!(run_scaling_benchmark(&net, &ds, config, &[2], 16, 1, 1).is_err());
}
