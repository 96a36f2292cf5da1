use std::fs;

use newton_forge::parallel::{run_scaling_benchmark, ScalingRecord, ScalingRun};

use crate::config::RunConfig;
use crate::error::CliError;
use crate::train::{check_dims, load_dataset};

/// One epoch per configured worker count; writes `scaling.csv`.
pub fn benchmark(config: &RunConfig) -> Result<ScalingRun, CliError> {
    let dataset = load_dataset(&config.data)?;
    check_dims(&config.network, &dataset)?;
    let run = run_scaling_benchmark(
        &config.network,
        &dataset,
        config.optimizer,
        &config.worker_counts,
        config.batch_size,
        config.seed_init,
        config.seed_shuffle,
    )?;
    let out = &config.out_dir;
    fs::create_dir_all(out).map_err(CliError::io(out))?;
    let path = out.join("scaling.csv");
    fs::write(&path, newton_forge::parallel::scaling_csv(&run.records)).map_err(CliError::io(&path))?;
    Ok(run)
}

/// Parses `1=104,2=60,...` into scaling records.
pub fn records_from_times(spec: &str) -> Result<Vec<ScalingRecord>, CliError> {
    let mut times = Vec::new();
    for item in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let parsed = item
            .split_once('=')
            .and_then(|(k, t)| Some((k.trim().parse::<usize>().ok()?, t.trim().parse::<f64>().ok()?)));
        match parsed {
            Some((k, t)) if k > 0 && t > 0.0 => times.push((k, t)),
            _ => {
                return Err(CliError::Config(format!(
                    "bad timing `{item}`, expected <workers>=<seconds>"
                )))
            }
        }
    }
    ScalingRecord::from_times(&times).map_err(|e| CliError::Config(e.to_string()))
}
