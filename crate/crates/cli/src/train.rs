use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use newton_forge::data::{epoch_batches, load_csv, load_idx, synth_classification, synth_regression, Dataset, Task};
use newton_forge::network::{Batch, Network};
use newton_forge::optim::Optimizer;
use newton_forge::parallel::{parallel_step, ParallelPlan};
use newton_forge::WeightVector;

use crate::config::{DataSource, RunConfig};
use crate::error::CliError;

pub const METRICS_HEADER: &str = "step,epoch,loss,accuracy,grad_norm,cg_iterations,fallback_used,wall_ms";

pub fn load_dataset(source: &DataSource) -> Result<Dataset, CliError> {
    Ok(match source {
        DataSource::SynthRegression {
            n_samples,
            input_dim,
            noise_sd,
            seed,
        } => synth_regression(*seed, *n_samples, *input_dim, *noise_sd)?,
        DataSource::SynthClassification {
            n_samples,
            input_dim,
            classes,
            seed,
        } => synth_classification(*seed, *n_samples, *input_dim, *classes)?,
        DataSource::Csv {
            path,
            target_columns,
            standardize,
        } => {
            let cols: Vec<&str> = target_columns.iter().map(String::as_str).collect();
            load_csv(path, &cols, *standardize)?
        }
        DataSource::Idx { images, labels, limit } => load_idx(images, labels, *limit)?,
    })
}

pub fn check_dims(network: &Network, dataset: &Dataset) -> Result<(), CliError> {
    if network.input_dim() != dataset.input_dim() || network.output_dim() != dataset.output_dim() {
        return Err(CliError::Config(format!(
            "architecture {network} expects {} inputs and {} outputs, dataset {} has {} and {}",
            network.input_dim(),
            network.output_dim(),
            dataset.name,
            dataset.input_dim(),
            dataset.output_dim()
        )));
    }
    Ok(())
}

/// Fraction of rows whose arg-max prediction matches the arg-max target.
pub fn accuracy(network: &Network, weights: &WeightVector, batch: &Batch) -> Result<f64, CliError> {
    let pred = network
        .predict(weights, batch.features())
        .map_err(|e| CliError::Runtime {
            component: "network",
            detail: e.to_string(),
        })?;
    let argmax = |row: &[f64]| {
        row.iter()
            .enumerate()
            .fold(
                (0, f64::NEG_INFINITY),
                |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) },
            )
            .0
    };
    let hits = (0..batch.len())
        .filter(|&r| argmax(pred.row(r)) == argmax(batch.targets().row(r)))
        .count();
    Ok(hits as f64 / batch.len() as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub steps: usize,
    pub final_train_loss: f64,
    pub final_validation_loss: Option<f64>,
    pub final_accuracy: Option<f64>,
    pub weights: WeightVector,
}

fn loss_on(network: &Network, weights: &WeightVector, batch: &Batch) -> Result<f64, CliError> {
    network
        .loss_value(weights, batch)
        .map_err(|e| CliError::Divergence(format!("final loss: {e}")))
}

/// Runs the configured training and writes `metrics.csv`, `model.nfm` and
/// `summary.txt` into the output directory.
pub fn train(config: &RunConfig) -> Result<TrainOutcome, CliError> {
    let started = Instant::now();
    let dataset = load_dataset(&config.data)?;
    let network = &config.network;
    check_dims(network, &dataset)?;
    let (train_set, validation) = dataset.split(config.validation_fraction, config.seed_shuffle)?;
    let eval_set = validation.as_ref().unwrap_or(&train_set).full_batch();
    let classification = dataset.task == Task::Classification;

    let mut weights = network.init_weights(config.seed_init);
    let mut optimizer = Optimizer::new(config.optimizer, weights.len())?;
    let plan = ParallelPlan::new(config.workers, config.reduction, config.batch_size)?;

    let mut metrics = String::from(METRICS_HEADER);
    metrics.push('\n');
    let mut step = 0usize;
    let mut last_accuracy = None;
    for epoch in 0..config.epochs {
        let batches = epoch_batches(
            &train_set,
            config.batch_size,
            epoch as u64,
            config.seed_shuffle,
            config.shuffle,
        );
        let groups: Vec<&[Batch]> = batches.chunks(config.workers).collect();
        for (gi, group) in groups.iter().enumerate() {
            let t = Instant::now();
            let (next, reports) = parallel_step(network, &weights, group, &mut optimizer, &plan)?;
            if !next.is_finite() {
                return Err(CliError::Divergence(format!(
                    "non-finite weights after step {}",
                    step + 1
                )));
            }
            weights = next;
            step += 1;
            let wall_ms = if config.record_wall_time {
                t.elapsed().as_secs_f64() * 1e3
            } else {
                0.0
            };
            let accuracy = if classification && gi + 1 == groups.len() {
                let a = accuracy(network, &weights, &eval_set)?;
                last_accuracy = Some(a);
                a.to_string()
            } else {
                String::new()
            };
            let loss: f64 = reports.iter().map(|r| r.loss_before).sum();
            let grad_norm = reports.iter().map(|r| r.grad_norm).sum::<f64>() / reports.len() as f64;
            let cg = reports.iter().map(|r| r.cg_iterations).max().unwrap_or(0);
            let fallback = reports.iter().any(|r| r.fallback_used);
            let _ = writeln!(
                metrics,
                "{step},{epoch},{loss},{accuracy},{grad_norm},{cg},{},{wall_ms}",
                u8::from(fallback)
            );
        }
    }

    let final_train_loss = loss_on(network, &weights, &train_set.full_batch())?;
    let final_validation_loss = match &validation {
        Some(v) => Some(loss_on(network, &weights, &v.full_batch())?),
        None => None,
    };
    let final_accuracy = if classification {
        Some(match last_accuracy {
            Some(a) => a,
            None => accuracy(network, &weights, &eval_set)?,
        })
    } else {
        None
    };
    if !final_train_loss.is_finite() {
        return Err(CliError::Divergence(format!(
            "final training loss is {final_train_loss}"
        )));
    }

    let out = &config.out_dir;
    fs::create_dir_all(out).map_err(CliError::io(out))?;
    write(&out.join("metrics.csv"), metrics.as_bytes())?;
    write(&out.join("model.nfm"), &network.encode_model(&weights))?;
    let mut summary = String::new();
    let _ = writeln!(summary, "scenario = {}", config.scenario);
    let _ = writeln!(summary, "dataset = {}", dataset.name);
    let _ = writeln!(summary, "arch = {network}");
    let _ = writeln!(summary, "optimizer = {}", config.optimizer.name());
    let _ = writeln!(summary, "workers = {}", config.workers);
    let _ = writeln!(summary, "epochs = {}", config.epochs);
    let _ = writeln!(summary, "steps = {step}");
    let _ = writeln!(summary, "train_samples = {}", train_set.len());
    let _ = writeln!(summary, "final_train_loss = {final_train_loss}");
    if let Some(v) = final_validation_loss {
        let _ = writeln!(summary, "final_validation_loss = {v}");
    }
    if let Some(a) = final_accuracy {
        let _ = writeln!(summary, "final_accuracy = {a}");
    }
    let _ = writeln!(summary, "wall_seconds = {:.3}", started.elapsed().as_secs_f64());
    write(&out.join("summary.txt"), summary.as_bytes())?;

    Ok(TrainOutcome {
        steps: step,
        final_train_loss,
        final_validation_loss,
        final_accuracy,
        weights,
    })
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(CliError::io(path))
}
