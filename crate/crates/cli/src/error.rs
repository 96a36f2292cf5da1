use std::path::PathBuf;

use thiserror::Error;

use newton_forge::autodiff::AutodiffError;
use newton_forge::data::DataError;
use newton_forge::linsolve::CgError;
use newton_forge::optim::OptimError;
use newton_forge::parallel::ParallelError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("data: {0}")]
    Data(#[from] DataError),
    #[error("divergence: {0}")]
    Divergence(String),
    #[error("check: {} failed", .0.join(", "))]
    CheckFailed(Vec<String>),
    #[error("io: {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{component}: {detail}")]
    Runtime { component: &'static str, detail: String },
}

impl CliError {
    /// 0 ok, 1 configuration or setup, 2 divergence, 3 failed check.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Divergence(_) => 2,
            CliError::CheckFailed(_) => 3,
            _ => 1,
        }
    }

    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }
}

fn autodiff_is_non_finite(e: &AutodiffError) -> bool {
    matches!(e, AutodiffError::NonFiniteLoss { .. } | AutodiffError::NonFinite { .. })
}

fn optim_is_non_finite(e: &OptimError) -> bool {
    match e {
        OptimError::Autodiff(a) => autodiff_is_non_finite(a),
        OptimError::Cg(CgError::NonFinite { .. }) => true,
        OptimError::Cg(CgError::Operator { source, .. }) => autodiff_is_non_finite(source),
        _ => false,
    }
}

impl From<ParallelError> for CliError {
    fn from(e: ParallelError) -> Self {
        match &e {
            ParallelError::Worker { source, .. } if optim_is_non_finite(source) => CliError::Divergence(e.to_string()),
            _ => CliError::Runtime {
                component: "parallel",
                detail: e.to_string(),
            },
        }
    }
}

impl From<OptimError> for CliError {
    fn from(e: OptimError) -> Self {
        if optim_is_non_finite(&e) {
            CliError::Divergence(e.to_string())
        } else {
            CliError::Runtime {
                component: "optim",
                detail: e.to_string(),
            }
        }
    }
}
