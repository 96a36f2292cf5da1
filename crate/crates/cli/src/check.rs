use std::fmt::Write as _;

use newton_forge::autodiff::set_adjoint_corruption;
use newton_forge::optim::OptimizerConfig;
use newton_forge::verify::{run_checks, CheckOutcome, CheckTolerances};

use crate::config::RunConfig;
use crate::error::CliError;
use crate::train::{check_dims, load_dataset};

/// Restores the adjoint rules when dropped.
struct CorruptionGuard;

impl Drop for CorruptionGuard {
    fn drop(&mut self) {
        set_adjoint_corruption(false);
    }
}

pub fn format_outcomes(outcomes: &[CheckOutcome]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<32} {:>12} {:>10}  {:<6} detail",
        "check", "error", "tolerance", "result"
    );
    for o in outcomes {
        let _ = writeln!(
            out,
            "{:<32} {:>12.3e} {:>10.0e}  {:<6} {}",
            o.name,
            o.error,
            o.tolerance,
            if o.passed { "PASS" } else { "FAIL" },
            o.detail
        );
    }
    out
}

/// Verification suite on the configured network at its seeded initial
/// weights, using the first `batch_size` rows of the dataset.
pub fn check(config: &RunConfig, corrupt_adjoint: bool) -> Result<Vec<CheckOutcome>, CliError> {
    let dataset = load_dataset(&config.data)?;
    check_dims(&config.network, &dataset)?;
    let rows: Vec<usize> = (0..config.batch_size.min(dataset.len())).collect();
    let batch = dataset.batch(&rows);
    let weights = config.network.init_weights(config.seed_init);
    let tau = match config.optimizer {
        OptimizerConfig::NewtonCg(c) => c.tau,
        _ => 1.0,
    };
    let _guard = corrupt_adjoint.then(|| {
        set_adjoint_corruption(true);
        CorruptionGuard
    });
    Ok(run_checks(
        &config.network,
        &weights,
        &batch,
        tau,
        config.seed_init,
        &CheckTolerances::default(),
    )?)
}
