use thiserror::Error;

/// Errors raised by the kernel, sampling, inference and experiment code.
#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not positive definite even with relative jitter {max_jitter:e}")]
    NotPositiveDefinite { max_jitter: f64 },

    #[error("all pairwise distances are zero")]
    DegenerateSamples,

    #[error("autoregressive coefficients {0:?} are not stationary")]
    NonStationary(Vec<f64>),

    #[error("window length {window} plus horizon {horizon} exceeds series length {len}")]
    WindowTooLong { window: usize, horizon: usize, len: usize },

    #[error("valid convolution of length {len} with filter width {width} has no outputs")]
    EmptyOutput { len: usize, width: usize },

    #[error("training diverged at step {step} (loss {loss})")]
    DivergedTraining { step: usize, loss: f64 },

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),

    #[error("zero variance at referenced position {0}")]
    ZeroVariancePosition(usize),

    #[error("covariance is singular: {0}")]
    SingularCovariance(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("csv schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
