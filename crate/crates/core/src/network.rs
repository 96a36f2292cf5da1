//! Feed-forward network definition, losses and the flat weight layout.
//!
//! Each layer `d` owns a contiguous `(M(d-1) + 1) x M(d)` row-major block of
//! the weight vector: `M(d-1)` rows of connection weights followed by one row
//! of biases.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::autodiff::{self, AutodiffError, Matrix, Objective, Tape, Var};
use crate::vector::WeightVector;

pub const MODEL_MAGIC: &str = "newton-forge-model v1";

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("invalid architecture: {0}")]
    Architecture(String),
    #[error("invalid batch: {0}")]
    Batch(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("malformed model file: {0}")]
    Model(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
    Sigmoid,
    Softmax,
}

impl Activation {
    pub const ALL: [Activation; 5] = [
        Activation::Identity,
        Activation::Relu,
        Activation::Tanh,
        Activation::Sigmoid,
        Activation::Softmax,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
            Activation::Softmax => "softmax",
        }
    }
}

impl FromStr for Activation {
    type Err = NetworkError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Activation::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| NetworkError::Architecture(format!("unknown activation '{s}'")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    SumSquaredError,
    CrossEntropy,
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::SumSquaredError => "sse",
            LossKind::CrossEntropy => "cross_entropy",
        }
    }
}

impl FromStr for LossKind {
    type Err = NetworkError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sse" => Ok(LossKind::SumSquaredError),
            "cross_entropy" => Ok(LossKind::CrossEntropy),
            other => Err(NetworkError::Architecture(format!("unknown loss '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerSpec {
    pub width: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn new(width: usize, activation: Activation) -> Self {
        Self { width, activation }
    }
}

/// Location of one layer's parameters in the flat weight vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerBlock {
    pub offset: usize,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl LayerBlock {
    pub fn weights_len(&self) -> usize {
        self.fan_in * self.fan_out
    }

    pub fn bias_offset(&self) -> usize {
        self.offset + self.weights_len()
    }

    pub fn len(&self) -> usize {
        (self.fan_in + 1) * self.fan_out
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    input_dim: usize,
    layers: Vec<LayerSpec>,
    loss: LossKind,
    blocks: Vec<LayerBlock>,
}

impl Network {
    pub fn build_mlp(input_dim: usize, layers: Vec<LayerSpec>, loss: LossKind) -> Result<Self, NetworkError> {
        if input_dim == 0 {
            return Err(NetworkError::Architecture("input_dim must be at least 1".into()));
        }
        if layers.is_empty() {
            return Err(NetworkError::Architecture("network needs at least one layer".into()));
        }
        let last = layers.len() - 1;
        for (d, layer) in layers.iter().enumerate() {
            if layer.width == 0 {
                return Err(NetworkError::Architecture(format!("layer {d} has zero width")));
            }
            if layer.activation == Activation::Softmax && d != last {
                return Err(NetworkError::Architecture(format!(
                    "softmax is only allowed on the final layer (found on layer {d})"
                )));
            }
        }
        if loss == LossKind::CrossEntropy && layers[last].activation != Activation::Softmax {
            return Err(NetworkError::Architecture(format!(
                "cross_entropy requires a softmax final layer, got {}",
                layers[last].activation.name()
            )));
        }
        let mut blocks = Vec::with_capacity(layers.len());
        let mut offset = 0;
        let mut fan_in = input_dim;
        for layer in &layers {
            let block = LayerBlock {
                offset,
                fan_in,
                fan_out: layer.width,
            };
            offset += block.len();
            fan_in = layer.width;
            blocks.push(block);
        }
        Ok(Self {
            input_dim,
            layers,
            loss,
            blocks,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(|l| l.width).unwrap_or(0)
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn loss_kind(&self) -> LossKind {
        self.loss
    }

    pub fn blocks(&self) -> &[LayerBlock] {
        &self.blocks
    }

    /// Total number of weights including biases.
    pub fn n_weights(&self) -> usize {
        self.blocks.iter().map(LayerBlock::len).sum()
    }

    /// Glorot-uniform connection weights, zero biases.
    pub fn init_weights(&self, seed: u64) -> WeightVector {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut w = vec![0.0; self.n_weights()];
        for block in &self.blocks {
            let limit = (6.0 / (block.fan_in + block.fan_out) as f64).sqrt();
            for v in &mut w[block.offset..block.bias_offset()] {
                *v = rng.random_range(-limit..limit);
            }
        }
        WeightVector::new(w)
    }

    /// Loss summed over the batch.
    pub fn loss_value(&self, weights: &WeightVector, batch: &Batch) -> Result<f64, NetworkError> {
        Ok(autodiff::record_forward(self, weights, batch)?.1)
    }

    /// Network outputs for each row of `features`, with the final activation
    /// applied (probabilities for softmax layers).
    pub fn predict(&self, weights: &WeightVector, features: &Matrix) -> Result<Matrix, NetworkError> {
        if weights.len() != self.n_weights() {
            return Err(AutodiffError::LengthMismatch {
                expected: self.n_weights(),
                actual: weights.len(),
            }
            .into());
        }
        let mut tape = Tape::new(self.n_weights());
        let (pre, last) = self.record_layers(&mut tape, weights.as_slice(), features)?;
        let out = match last {
            Activation::Softmax => tape.softmax(pre)?,
            _ => pre,
        };
        Ok(tape.value(out).clone())
    }

    /// Records every layer. The final activation is left for the caller when
    /// it is softmax, so cross-entropy can use the fused primitive; the
    /// returned activation says what remains to be applied.
    fn record_layers(
        &self,
        tape: &mut Tape,
        weights: &[f64],
        features: &Matrix,
    ) -> Result<(Var, Activation), AutodiffError> {
        if features.cols() != self.input_dim {
            return Err(AutodiffError::Shape {
                op: "input",
                detail: format!(
                    "batch has {} features, network expects {}",
                    features.cols(),
                    self.input_dim
                ),
            });
        }
        let mut h = tape.constant(features.clone());
        let last = self.layers.len() - 1;
        for (d, (layer, block)) in self.layers.iter().zip(&self.blocks).enumerate() {
            let w = tape.param(weights, block.offset, block.fan_in, block.fan_out)?;
            let b = tape.param(weights, block.bias_offset(), 1, block.fan_out)?;
            let z = tape.matmul(h, w)?;
            let z = tape.add_row(z, b)?;
            h = match layer.activation {
                Activation::Identity => z,
                Activation::Relu => tape.relu(z)?,
                Activation::Tanh => tape.tanh(z)?,
                Activation::Sigmoid => tape.sigmoid(z)?,
                Activation::Softmax => {
                    debug_assert_eq!(d, last);
                    return Ok((z, Activation::Softmax));
                }
            };
        }
        Ok((h, self.layers[last].activation))
    }

    /// `<input_dim>:<w1><act1>:...:<loss>`, e.g. `13:64relu:1identity:sse`.
    pub fn arch_string(&self) -> String {
        let mut s = self.input_dim.to_string();
        for layer in &self.layers {
            s.push_str(&format!(":{}{}", layer.width, layer.activation.name()));
        }
        s.push(':');
        s.push_str(self.loss.name());
        s
    }

    pub fn parse_arch(arch: &str) -> Result<Self, NetworkError> {
        let parts: Vec<&str> = arch.trim().split(':').collect();
        if parts.len() < 3 {
            return Err(NetworkError::Architecture(format!(
                "'{arch}' should look like <input>:<width><activation>:...:<loss>"
            )));
        }
        let input_dim = parts[0]
            .parse::<usize>()
            .map_err(|_| NetworkError::Architecture(format!("bad input dimension '{}'", parts[0])))?;
        let loss: LossKind = parts[parts.len() - 1].parse()?;
        let mut layers = Vec::new();
        for part in &parts[1..parts.len() - 1] {
            let split = part
                .find(|c: char| !c.is_ascii_digit())
                .ok_or_else(|| NetworkError::Architecture(format!("layer '{part}' has no activation")))?;
            let (width, act) = part.split_at(split);
            let width = width
                .parse::<usize>()
                .map_err(|_| NetworkError::Architecture(format!("layer '{part}' has no width")))?;
            layers.push(LayerSpec::new(width, act.parse()?));
        }
        Self::build_mlp(input_dim, layers, loss)
    }

    /// Header line followed by the weights as little-endian `f64`.
    pub fn encode_model(&self, weights: &WeightVector) -> Vec<u8> {
        let mut out = format!("{MODEL_MAGIC} n={} arch={}\n", weights.len(), self.arch_string()).into_bytes();
        for v in weights.as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn decode_model(bytes: &[u8]) -> Result<(Self, WeightVector), NetworkError> {
        let newline = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| NetworkError::Model("missing header line".into()))?;
        let header =
            std::str::from_utf8(&bytes[..newline]).map_err(|_| NetworkError::Model("header is not UTF-8".into()))?;
        let rest = header
            .strip_prefix(MODEL_MAGIC)
            .ok_or_else(|| NetworkError::Model(format!("unexpected header '{header}'")))?;
        let mut n = None;
        let mut arch = None;
        for field in rest.split_whitespace() {
            if let Some(v) = field.strip_prefix("n=") {
                n = v.parse::<usize>().ok();
            } else if let Some(v) = field.strip_prefix("arch=") {
                arch = Some(v);
            }
        }
        let n = n.ok_or_else(|| NetworkError::Model("missing or invalid n=".into()))?;
        let network = Self::parse_arch(arch.ok_or_else(|| NetworkError::Model("missing arch=".into()))?)?;
        if network.n_weights() != n {
            return Err(NetworkError::Model(format!(
                "n={n} does not match architecture ({} weights)",
                network.n_weights()
            )));
        }
        let payload = &bytes[newline + 1..];
        if payload.len() != n * 8 {
            return Err(NetworkError::Model(format!(
                "expected {} payload bytes, found {}",
                n * 8,
                payload.len()
            )));
        }
        let values = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        Ok((network, WeightVector::new(values)))
    }

    pub fn save_model(&self, weights: &WeightVector, path: &Path) -> Result<(), NetworkError> {
        let io = |source| NetworkError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut f = fs::File::create(path).map_err(io)?;
        f.write_all(&self.encode_model(weights)).map_err(io)
    }

    pub fn load_model(path: &Path) -> Result<(Self, WeightVector), NetworkError> {
        let bytes = fs::read(path).map_err(|source| NetworkError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::decode_model(&bytes)
    }
}

impl fmt::Display for Network {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.arch_string())
    }
}

/// Rows of features with their targets.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    features: Matrix,
    targets: Matrix,
}

impl Batch {
    pub fn new(features: Matrix, targets: Matrix) -> Result<Self, NetworkError> {
        if features.rows() == 0 {
            return Err(NetworkError::Batch("batch is empty".into()));
        }
        if features.rows() != targets.rows() {
            return Err(NetworkError::Batch(format!(
                "{} feature rows but {} target rows",
                features.rows(),
                targets.rows()
            )));
        }
        Ok(Self { features, targets })
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn targets(&self) -> &Matrix {
        &self.targets
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Returns the first row that is not a one-hot vector.
pub fn first_non_one_hot(targets: &Matrix) -> Option<usize> {
    (0..targets.rows()).find(|&r| {
        let row = targets.row(r);
        let ones = row.iter().filter(|&&v| v == 1.0).count();
        let zeros = row.iter().filter(|&&v| v == 0.0).count();
        ones != 1 || ones + zeros != row.len()
    })
}

/// Mini-batch loss of a network as an [`Objective`].
#[derive(Clone, Copy, Debug)]
pub struct NetworkLoss<'a> {
    network: &'a Network,
    batch: &'a Batch,
}

impl<'a> NetworkLoss<'a> {
    pub fn new(network: &'a Network, batch: &'a Batch) -> Self {
        Self { network, batch }
    }

    pub fn network(&self) -> &'a Network {
        self.network
    }

    pub fn batch(&self) -> &'a Batch {
        self.batch
    }
}

impl Objective for NetworkLoss<'_> {
    fn n_weights(&self) -> usize {
        self.network.n_weights()
    }

    fn record(&self, tape: &mut Tape, weights: &[f64]) -> Result<Var, AutodiffError> {
        let targets = self.batch.targets();
        if targets.cols() != self.network.output_dim() {
            return Err(AutodiffError::Shape {
                op: "targets",
                detail: format!(
                    "batch has {} target columns, network outputs {}",
                    targets.cols(),
                    self.network.output_dim()
                ),
            });
        }
        let (pre, last) = self.network.record_layers(tape, weights, self.batch.features())?;
        let y = tape.constant(targets.clone());
        match self.network.loss {
            LossKind::CrossEntropy => {
                if let Some(row) = first_non_one_hot(targets) {
                    return Err(AutodiffError::Shape {
                        op: "targets",
                        detail: format!("row {row} is not one-hot"),
                    });
                }
                tape.softmax_cross_entropy(pre, y)
            }
            LossKind::SumSquaredError => {
                let out = match last {
                    Activation::Softmax => tape.softmax(pre)?,
                    _ => pre,
                };
                let diff = tape.sub(y, out)?;
                let sq = tape.mul(diff, diff)?;
                tape.sum_all(sq)
            }
        }
    }
}
