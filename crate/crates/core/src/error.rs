use std::path::PathBuf;

/// Errors produced anywhere in the surrogate pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("shape mismatch: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("invalid architecture at stage `{stage}`: {reason}")]
    InvalidArchitecture { stage: String, reason: String },

    #[error("backward called without a recorded forward pass ({0})")]
    MissingTape(&'static str),

    #[error("batch normalization needs a non-empty batch in train mode")]
    EmptyBatch,

    #[error("cholesky factorization failed after jitter {jitter:e} (pivot {pivot} = {value:e})")]
    Cholesky { jitter: f64, pivot: usize, value: f64 },

    #[error("linear solver did not converge: {iterations} iterations, relative residual {residual:e}")]
    LinearSolver { iterations: usize, residual: f64 },

    #[error("time step {dt:e} s exceeds the CFL limit {limit:e} s")]
    Cfl { dt: f64, limit: f64 },

    #[error("non-finite loss at epoch {epoch}, batch {batch}: mse={mse}, bce={bce}")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        mse: f64,
        bce: f64,
    },

    #[error("R² is undefined: targets have zero variance")]
    UndefinedR2,

    #[error("need at least {need} samples, got {got}")]
    InsufficientSamples { need: usize, got: usize },

    #[error("realization sets differ between the compared estimates")]
    MismatchedRealizations,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("checksum mismatch for {path}: manifest {expected}, file {actual}")]
    Checksum {
        path: PathBuf,
        expected: String,
        actual: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of a numerical algorithm rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Cholesky { .. }
                | Error::LinearSolver { .. }
                | Error::Cfl { .. }
                | Error::NonFiniteLoss { .. }
                | Error::UndefinedR2
        )
    }

    /// Process exit status: 1 bad configuration, 2 bad or missing data,
    /// 3 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidGeometry(_) | Error::InvalidArchitecture { .. } => 1,
            Error::Data(_)
            | Error::Checksum { .. }
            | Error::Io { .. }
            | Error::ShapeMismatch { .. }
            | Error::MismatchedRealizations
            | Error::InsufficientSamples { .. } => 2,
            _ => 3,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
