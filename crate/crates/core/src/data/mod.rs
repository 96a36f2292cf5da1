//! Datasets and deterministic epoch batching.

mod idx;
mod tabular;

use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

pub use idx::{load_idx, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC};
pub use tabular::{load_csv, write_csv};

use crate::autodiff::Matrix;
use crate::network::{first_non_one_hot, Batch};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: row {row}, column {column}: {detail}")]
    Cell {
        path: PathBuf,
        row: usize,
        column: usize,
        detail: String,
    },
    #[error("{path}: {detail}")]
    Format { path: PathBuf, detail: String },
    #[error("invalid dataset: {0}")]
    Invalid(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Task {
    Regression,
    Classification,
}

/// Per-column `(x - mean) / sd` parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl Standardization {
    /// Columns with `sd < 1e-12` keep a divisor of 1.
    pub fn fit(m: &Matrix) -> Self {
        let n = m.rows() as f64;
        let mut mean = vec![0.0; m.cols()];
        let mut sd = vec![0.0; m.cols()];
        for c in 0..m.cols() {
            let mu = (0..m.rows()).map(|r| m.get(r, c)).sum::<f64>() / n;
            let var = (0..m.rows()).map(|r| (m.get(r, c) - mu).powi(2)).sum::<f64>() / n;
            mean[c] = mu;
            sd[c] = if var.sqrt() < 1e-12 { 1.0 } else { var.sqrt() };
        }
        Self { mean, sd }
    }

    pub fn apply(&self, m: &mut Matrix) {
        for r in 0..m.rows() {
            for c in 0..m.cols() {
                m.set(r, c, (m.get(r, c) - self.mean[c]) / self.sd[c]);
            }
        }
    }

    pub fn invert(&self, m: &mut Matrix) {
        for r in 0..m.rows() {
            for c in 0..m.cols() {
                m.set(r, c, m.get(r, c) * self.sd[c] + self.mean[c]);
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub task: Task,
    features: Matrix,
    targets: Matrix,
    /// Feature standardization applied at load time, if any.
    pub standardization: Option<Standardization>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, task: Task, features: Matrix, targets: Matrix) -> Result<Self, DataError> {
        if features.rows() == 0 {
            return Err(DataError::Invalid("dataset has no rows".into()));
        }
        if features.rows() != targets.rows() {
            return Err(DataError::Invalid(format!(
                "{} feature rows but {} target rows",
                features.rows(),
                targets.rows()
            )));
        }
        if !features.is_finite() || !targets.is_finite() {
            return Err(DataError::Invalid("non-finite values in dataset".into()));
        }
        if task == Task::Classification {
            if let Some(row) = first_non_one_hot(&targets) {
                return Err(DataError::Invalid(format!(
                    "classification target row {row} is not one-hot"
                )));
            }
        }
        Ok(Self {
            name: name.into(),
            task,
            features,
            targets,
            standardization: None,
        })
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn input_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.targets.cols()
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn targets(&self) -> &Matrix {
        &self.targets
    }

    /// Standardizes feature columns in place and records the parameters.
    pub fn standardize_features(&mut self) {
        let params = Standardization::fit(&self.features);
        params.apply(&mut self.features);
        self.standardization = Some(params);
    }

    /// Rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            name: self.name.clone(),
            task: self.task,
            features: gather(&self.features, indices),
            targets: gather(&self.targets, indices),
            standardization: self.standardization.clone(),
        }
    }

    pub fn batch(&self, indices: &[usize]) -> Batch {
        Batch::new(gather(&self.features, indices), gather(&self.targets, indices))
            .expect("indices select at least one row")
    }

    pub fn full_batch(&self) -> Batch {
        Batch::new(self.features.clone(), self.targets.clone()).expect("dataset is non-empty")
    }

    /// Splits off the last `round(validation_fraction * N)` rows of a seeded
    /// permutation as validation data. Returns `(train, validation)`; the
    /// validation set is `None` when it would be empty. The training part is
    /// never empty.
    pub fn split(&self, validation_fraction: f64, seed: u64) -> Result<(Dataset, Option<Dataset>), DataError> {
        if !(0.0..1.0).contains(&validation_fraction) {
            return Err(DataError::Invalid(format!(
                "validation fraction must lie in [0, 1), got {validation_fraction}"
            )));
        }
        let n = self.len();
        let n_valid = ((validation_fraction * n as f64).round() as usize).min(n - 1);
        if n_valid == 0 {
            return Ok((self.clone(), None));
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let (train, valid) = order.split_at(n - n_valid);
        Ok((self.select(train), Some(self.select(valid))))
    }
}

fn gather(m: &Matrix, indices: &[usize]) -> Matrix {
    let mut data = Vec::with_capacity(indices.len() * m.cols());
    for &i in indices {
        data.extend_from_slice(m.row(i));
    }
    Matrix::from_vec(indices.len(), m.cols(), data)
}

/// `Y = X beta + noise_sd * e` with `X ~ U[-1, 1]`, `beta, e ~ N(0, 1)`.
pub fn synth_regression(seed: u64, n: usize, d_in: usize, noise_sd: f64) -> Result<Dataset, DataError> {
    if n == 0 || d_in == 0 {
        return Err(DataError::Invalid(
            "synthetic regression needs n >= 1 and d_in >= 1".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let beta: Vec<f64> = (0..d_in).map(|_| rng.sample(StandardNormal)).collect();
    let mut x = Matrix::zeros(n, d_in);
    let mut y = Matrix::zeros(n, 1);
    for r in 0..n {
        let mut acc = 0.0;
        for (c, b) in beta.iter().enumerate() {
            let v = rng.random_range(-1.0..=1.0);
            x.set(r, c, v);
            acc += v * b;
        }
        let e: f64 = rng.sample(StandardNormal);
        y.set(r, 0, acc + noise_sd * e);
    }
    Dataset::new(format!("synth_regression(seed={seed})"), Task::Regression, x, y)
}

/// Labels sampled from `softmax(X B)` with `X, B ~ N(0, 1)`, one-hot encoded.
pub fn synth_classification(seed: u64, n: usize, d_in: usize, classes: usize) -> Result<Dataset, DataError> {
    if n == 0 || d_in == 0 || classes < 2 {
        return Err(DataError::Invalid(
            "synthetic classification needs n >= 1, d_in >= 1 and at least 2 classes".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b: Vec<f64> = (0..d_in * classes).map(|_| rng.sample(StandardNormal)).collect();
    let mut x = Matrix::zeros(n, d_in);
    let mut y = Matrix::zeros(n, classes);
    for r in 0..n {
        for c in 0..d_in {
            x.set(r, c, rng.sample(StandardNormal));
        }
        let logits: Vec<f64> = (0..classes)
            .map(|k| (0..d_in).map(|c| x.get(r, c) * b[c * classes + k]).sum())
            .collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
        let mut u = rng.random::<f64>() * weights.iter().sum::<f64>();
        let mut label = classes - 1;
        for (k, w) in weights.iter().enumerate() {
            if u < *w {
                label = k;
                break;
            }
            u -= w;
        }
        y.set(r, label, 1.0);
    }
    Dataset::new(format!("synth_classification(seed={seed})"), Task::Classification, x, y)
}

/// Sample order for one epoch: a permutation seeded by `(base_seed, epoch)`,
/// or the identity when `shuffle` is off.
pub fn epoch_order(n: usize, epoch: u64, base_seed: u64, shuffle: bool) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    if shuffle {
        let mut rng = ChaCha8Rng::seed_from_u64(base_seed);
        rng.set_stream(epoch);
        order.shuffle(&mut rng);
    }
    order
}

/// Consecutive slices of the epoch order; the last batch may be short.
pub fn epoch_batches(dataset: &Dataset, batch_size: usize, epoch: u64, base_seed: u64, shuffle: bool) -> Vec<Batch> {
    assert!(batch_size >= 1, "batch size must be at least 1");
    epoch_order(dataset.len(), epoch, base_seed, shuffle)
        .chunks(batch_size)
        .map(|idx| dataset.batch(idx))
        .collect()
}
