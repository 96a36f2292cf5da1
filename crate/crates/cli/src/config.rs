//! Flat `key = value` run configuration.
//!
//! One setting per line, `#` starts a comment, no sections. Relative paths
//! resolve against the directory holding the config file.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use newton_forge::network::Network;
use newton_forge::optim::{AdamConfig, NewtonCgConfig, OptimizerConfig, SgdConfig};
use newton_forge::parallel::Reduction;

use crate::error::CliError;

#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    SynthRegression {
        n_samples: usize,
        input_dim: usize,
        noise_sd: f64,
        seed: u64,
    },
    SynthClassification {
        n_samples: usize,
        input_dim: usize,
        classes: usize,
        seed: u64,
    },
    Csv {
        path: PathBuf,
        target_columns: Vec<String>,
        standardize: bool,
    },
    Idx {
        images: PathBuf,
        labels: PathBuf,
        limit: Option<usize>,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub scenario: String,
    pub data: DataSource,
    pub validation_fraction: f64,
    pub network: Network,
    pub optimizer: OptimizerConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub workers: usize,
    pub reduction: Reduction,
    pub seed_init: u64,
    pub seed_shuffle: u64,
    pub shuffle: bool,
    pub out_dir: PathBuf,
    pub worker_counts: Vec<usize>,
    /// When false, `wall_ms` is written as 0 so metrics files are reproducible.
    pub record_wall_time: bool,
}

const COMMON_KEYS: &[&str] = &[
    "scenario",
    "dataset",
    "validation_fraction",
    "arch",
    "optimizer",
    "learning_rate",
    "epochs",
    "batch_size",
    "workers",
    "reduction",
    "seed_init",
    "seed_shuffle",
    "shuffle",
    "out",
    "worker_counts",
    "record_wall_time",
];

fn optimizer_keys(name: &str) -> Option<&'static [&'static str]> {
    match name {
        "sgd" => Some(&[]),
        "adam" => Some(&["beta1", "beta2", "delta"]),
        "newton_cg" => Some(&["tau", "cg_tol", "max_iter"]),
        _ => None,
    }
}

fn dataset_keys(name: &str) -> Option<&'static [&'static str]> {
    match name {
        "synth_regression" => Some(&["n_samples", "input_dim", "noise_sd", "data_seed"]),
        "synth_classification" => Some(&["n_samples", "input_dim", "classes", "data_seed"]),
        "csv" => Some(&["csv_path", "target_columns", "standardize"]),
        "idx" => Some(&["idx_images", "idx_labels", "limit"]),
        _ => None,
    }
}

const ALL_OPTIONAL_KEYS: &[&str] = &[
    "beta1",
    "beta2",
    "delta",
    "tau",
    "cg_tol",
    "max_iter",
    "n_samples",
    "input_dim",
    "noise_sd",
    "classes",
    "data_seed",
    "csv_path",
    "target_columns",
    "standardize",
    "idx_images",
    "idx_labels",
    "limit",
];

/// Parsed `key = value` pairs with their line numbers.
struct Entries {
    values: BTreeMap<String, (usize, String)>,
}

impl Entries {
    fn parse(text: &str) -> Result<Self, CliError> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("line {line_no}: expected `key = value`, got `{line}`")))?;
            let key = key.trim().to_string();
            if key.is_empty() {
                return Err(CliError::Config(format!("line {line_no}: empty key")));
            }
            if values
                .insert(key.clone(), (line_no, value.trim().to_string()))
                .is_some()
            {
                return Err(CliError::Config(format!("line {line_no}: `{key}` is set twice")));
            }
        }
        Ok(Self { values })
    }

    fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(|(_, v)| v.as_str())
    }

    fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError> {
        match self.values.get(key) {
            None => Ok(None),
            Some((line, v)) => v
                .parse::<T>()
                .map(Some)
                .map_err(|_| CliError::Config(format!("line {line}: invalid value `{v}` for `{key}`"))),
        }
    }

    fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T, CliError> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    fn require<T: FromStr>(&self, key: &str) -> Result<T, CliError> {
        self.get(key)?
            .ok_or_else(|| CliError::Config(format!("missing required key `{key}`")))
    }

    fn bool_or(&self, key: &str, default: bool) -> Result<bool, CliError> {
        match self.values.get(key) {
            None => Ok(default),
            Some((line, v)) => match v.as_str() {
                "true" | "yes" | "1" => Ok(true),
                "false" | "no" | "0" => Ok(false),
                _ => Err(CliError::Config(format!(
                    "line {line}: `{key}` must be true or false, got `{v}`"
                ))),
            },
        }
    }

    fn line(&self, key: &str) -> usize {
        self.values.get(key).map_or(0, |(l, _)| *l)
    }
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>, CliError> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<T>()
                .map_err(|_| CliError::Config(format!("invalid entry `{s}` in `{key}`")))
        })
        .collect()
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let default_name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "run".into());
        Self::parse(&text, &base, &default_name)
    }

    /// Parses config text; relative paths are joined onto `base`.
    pub fn parse(text: &str, base: &Path, default_name: &str) -> Result<Self, CliError> {
        let e = Entries::parse(text)?;
        let optimizer_name: String = e.get_or("optimizer", "newton_cg".to_string())?;
        let opt_keys = optimizer_keys(&optimizer_name)
            .ok_or_else(|| CliError::Config(format!("unknown optimizer `{optimizer_name}` (sgd, adam, newton_cg)")))?;
        let dataset_name: String = e.require("dataset")?;
        let data_keys = dataset_keys(&dataset_name).ok_or_else(|| {
            CliError::Config(format!(
                "unknown dataset `{dataset_name}` (synth_regression, synth_classification, csv, idx)"
            ))
        })?;
        for key in e.values.keys() {
            let k = key.as_str();
            if COMMON_KEYS.contains(&k) || opt_keys.contains(&k) || data_keys.contains(&k) {
                continue;
            }
            let line = e.line(k);
            if let Some(owner) = ["sgd", "adam", "newton_cg"]
                .into_iter()
                .find(|o| optimizer_keys(o).is_some_and(|keys| keys.contains(&k)))
            {
                return Err(CliError::Config(format!(
                    "line {line}: `{k}` is a {owner} setting and not valid for optimizer {optimizer_name}"
                )));
            }
            if ALL_OPTIONAL_KEYS.contains(&k) {
                return Err(CliError::Config(format!(
                    "line {line}: `{k}` is not valid for dataset {dataset_name}"
                )));
            }
            return Err(CliError::Config(format!("line {line}: unknown key `{k}`")));
        }

        let resolve = |p: String| -> PathBuf {
            let p = PathBuf::from(p);
            if p.is_absolute() {
                p
            } else {
                base.join(p)
            }
        };
        let existing = |key: &str| -> Result<PathBuf, CliError> {
            let p = resolve(e.require::<String>(key)?);
            if !p.exists() {
                return Err(CliError::Config(format!(
                    "`{key}` points to missing file {}",
                    p.display()
                )));
            }
            Ok(p)
        };

        let data = match dataset_name.as_str() {
            "synth_regression" => DataSource::SynthRegression {
                n_samples: e.require("n_samples")?,
                input_dim: e.require("input_dim")?,
                noise_sd: e.get_or("noise_sd", 0.0)?,
                seed: e.get_or("data_seed", 0)?,
            },
            "synth_classification" => DataSource::SynthClassification {
                n_samples: e.require("n_samples")?,
                input_dim: e.require("input_dim")?,
                classes: e.require("classes")?,
                seed: e.get_or("data_seed", 0)?,
            },
            "csv" => DataSource::Csv {
                path: existing("csv_path")?,
                target_columns: parse_list("target_columns", &e.require::<String>("target_columns")?)?,
                standardize: e.bool_or("standardize", true)?,
            },
            _ => DataSource::Idx {
                images: existing("idx_images")?,
                labels: existing("idx_labels")?,
                limit: e.get("limit")?,
            },
        };

        let network = Network::parse_arch(&e.require::<String>("arch")?)
            .map_err(|err| CliError::Config(format!("line {}: {err}", e.line("arch"))))?;

        let optimizer = match optimizer_name.as_str() {
            "sgd" => OptimizerConfig::Sgd(SgdConfig {
                learning_rate: e.get_or("learning_rate", SgdConfig::default().learning_rate)?,
            }),
            "adam" => {
                let d = AdamConfig::default();
                OptimizerConfig::Adam(AdamConfig {
                    learning_rate: e.get_or("learning_rate", d.learning_rate)?,
                    beta1: e.get_or("beta1", d.beta1)?,
                    beta2: e.get_or("beta2", d.beta2)?,
                    delta: e.get_or("delta", d.delta)?,
                })
            }
            _ => {
                let d = NewtonCgConfig::default();
                OptimizerConfig::NewtonCg(NewtonCgConfig {
                    learning_rate: e.get_or("learning_rate", d.learning_rate)?,
                    tau: e.get_or("tau", d.tau)?,
                    cg_tol: e.get_or("cg_tol", d.cg_tol)?,
                    max_iter: e.get_or("max_iter", d.max_iter)?,
                })
            }
        };
        optimizer.validate().map_err(|err| CliError::Config(err.to_string()))?;

        let reduction = match e.raw("reduction") {
            None => Reduction::Mean,
            Some(v) => v.parse().map_err(CliError::Config)?,
        };
        let scenario: String = e.get_or("scenario", default_name.to_string())?;
        let out_dir = resolve(e.get_or("out", format!("runs/{scenario}"))?);
        let worker_counts = match e.raw("worker_counts") {
            None => vec![1],
            Some(v) => parse_list("worker_counts", v)?,
        };

        let config = RunConfig {
            scenario,
            data,
            validation_fraction: e.get_or("validation_fraction", 0.1)?,
            network,
            optimizer,
            epochs: e.get_or("epochs", 10)?,
            batch_size: e.get_or("batch_size", 32)?,
            workers: e.get_or("workers", 1)?,
            reduction,
            seed_init: e.get_or("seed_init", 0)?,
            seed_shuffle: e.get_or("seed_shuffle", 0)?,
            shuffle: e.bool_or("shuffle", true)?,
            out_dir,
            worker_counts,
            record_wall_time: e.bool_or("record_wall_time", false)?,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.batch_size == 0 {
            return Err(CliError::Config("batch_size must be at least 1".into()));
        }
        if self.workers == 0 {
            return Err(CliError::Config("workers must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(CliError::Config(format!(
                "validation_fraction must lie in [0, 1), got {}",
                self.validation_fraction
            )));
        }
        if self.worker_counts.is_empty() || self.worker_counts.contains(&0) {
            return Err(CliError::Config("worker_counts must list positive integers".into()));
        }
        if !self.worker_counts.contains(&1) {
            return Err(CliError::Config("worker_counts must include 1".into()));
        }
        match &self.data {
            DataSource::SynthRegression {
                n_samples, input_dim, ..
            }
            | DataSource::SynthClassification {
                n_samples, input_dim, ..
            } => {
                if *n_samples == 0 || *input_dim == 0 {
                    return Err(CliError::Config("n_samples and input_dim must be positive".into()));
                }
            }
            DataSource::Csv { target_columns, .. } if target_columns.is_empty() => {
                return Err(CliError::Config("target_columns is empty".into()));
            }
            _ => {}
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = "dataset = synth_regression\nn_samples = 20\ninput_dim = 3\narch = 3:4tanh:1identity:sse\n";

    fn parse(extra: &str) -> Result<RunConfig, CliError> {
        RunConfig::parse(&format!("{BASE}{extra}"), Path::new("/cfg"), "demo")
    }

    #[test]
    fn defaults() {
        let c = parse("").unwrap();
        assert_eq!(c.scenario, "demo");
        assert_eq!(c.optimizer, OptimizerConfig::NewtonCg(NewtonCgConfig::default()));
        assert_eq!(c.validation_fraction, 0.1);
        assert_eq!(c.out_dir, PathBuf::from("/cfg/runs/demo"));
        assert_eq!(c.worker_counts, vec![1]);
        assert!(c.shuffle);
        assert!(!c.record_wall_time);
    }

    #[test]
    fn comments_and_overrides() {
        let c = parse("# a comment\noptimizer = adam # trailing\nbeta1 = 0.8\nworker_counts = 1, 2,4\nout = /tmp/x\n")
            .unwrap();
        match c.optimizer {
            OptimizerConfig::Adam(a) => assert_eq!(a.beta1, 0.8),
            other => panic!("{other:?}"),
        }
        assert_eq!(c.worker_counts, vec![1, 2, 4]);
        assert_eq!(c.out_dir, PathBuf::from("/tmp/x"));
    }

    #[test]
    fn optimizer_specific_keys_are_checked() {
        let err = parse("optimizer = sgd\ntau = 1\n").unwrap_err().to_string();
        assert!(err.contains("newton_cg setting"), "{err}");
        let err = parse("optimizer = newton_cg\nbeta2 = 0.9\n").unwrap_err().to_string();
        assert!(err.contains("adam setting"), "{err}");
        assert!(parse("optimizer = newton_cg\ntau = 0.5\nmax_iter = 5\n").is_ok());
    }

    #[test]
    fn rejects_bad_input() {
        for extra in [
            "bogus = 1\n",
            "epochs = many\n",
            "arch = 3:4tanh:1relu:cross_entropy\n",
            "optimizer = lbfgs\n",
            "learning_rate = -1\n",
            "worker_counts = 2,4\n",
            "csv_path = x.csv\n",
            "epochs = 1\nepochs = 2\n",
            "no equals sign\n",
            "shuffle = maybe\n",
            "reduction = max\n",
        ] {
            let text = format!("{BASE}{extra}").replace("arch = 3:4tanh:1identity:sse\narch", "arch");
            assert!(
                matches!(
                    RunConfig::parse(&text, Path::new("/cfg"), "x"),
                    Err(CliError::Config(_))
                ),
                "{extra}"
            );
        }
    }

    #[test]
    fn missing_files_are_config_errors() {
        let text = "dataset = csv\ncsv_path = nowhere.csv\ntarget_columns = y\narch = 2:1identity:sse\n";
        let err = RunConfig::parse(text, Path::new("/definitely/not"), "x")
            .unwrap_err()
            .to_string();
        assert!(err.contains("missing file"), "{err}");
    }
}
