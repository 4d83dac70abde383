use thiserror::Error;

/// Errors produced by the solver and verification machinery.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// A trajectory produced a non-finite coefficient. Stochastic runs must
    /// fail loudly; the step index locates the failure in the noise stream.
    #[error("trajectory blow-up at step {step}: non-finite coefficient")]
    BlowUp { step: u64 },

    #[error("degenerate noise direction: drift touches mode {mode} with b_j = 0")]
    DegenerateMode { mode: usize },

    #[error("{what} did not converge after {iterations} iterations")]
    NonConvergence { what: String, iterations: usize },

    #[error("counter space exhausted for random stream")]
    CounterExhausted,

    #[error("mismatched increment stream: expected step {expected}, got {got}")]
    MismatchedStream { expected: u64, got: u64 },

    #[error("coupled Gaussians must share their covariance (index {index}: {a} vs {b})")]
    CovarianceMismatch { index: usize, a: f64, b: f64 },

    #[error("quadrature produced a non-finite value for {what}")]
    QuadratureFailure { what: String },

    #[error("time regression: ledger at step {ledger}, snapshot at step {snapshot}")]
    TimeRegression { ledger: u64, snapshot: u64 },

    #[error("verification check failed: {0}")]
    CheckFailed(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("serialization: {0}")]
    Serialization(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
