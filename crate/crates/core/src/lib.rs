//! Feed-forward network training with a matrix-free Newton-CG optimizer.
//!
//! The crate is organised bottom-up:
//!
//! * [`autodiff`]: a tape supporting gradients and Hessian-vector products
//!   (two reverse sweeps each).
//! * [`network`]: MLP definition, losses, weight layout and model files.
//! * [`linsolve`]: conjugate gradients through a matvec callback.
//! * [`optim`]: SGD, Adam and the Tikhonov-damped Newton-CG step.
//! * [`parallel`]: data-parallel stepping from a shared weight snapshot.
//! * [`data`]: CSV/IDX/synthetic datasets and epoch batching.
//! * [`verify`]: finite-difference and dense-solve checks.

pub mod autodiff;
pub mod data;
pub mod linsolve;
pub mod network;
pub mod optim;
pub mod parallel;
pub mod vector;
pub mod verify;

pub use autodiff::{AutodiffError, Matrix, Objective, Tape};
pub use network::{Activation, Batch, LayerSpec, LossKind, Network, NetworkLoss};
pub use vector::{GradVector, WeightVector};
