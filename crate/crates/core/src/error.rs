use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("non-finite value in {field} at grid index {index}")]
    NonFinite { field: String, index: usize },

    #[error("operation requires dim = {expected}, got {got}")]
    UnsupportedDimension { expected: usize, got: usize },

    #[error(
        "velocity is not divergence-free: max |div u| = {max:.3e} at grid index {index} \
         (x = {position:?}), tolerance {tolerance:.1e}"
    )]
    Divergence {
        max: f64,
        index: usize,
        position: Vec<f64>,
        tolerance: f64,
    },

    #[error("ball of radius {radius} contains no grid points (spacing {spacing})")]
    EmptyRegion { radius: f64, spacing: f64 },

    #[error("matrix is not skew-symmetric (max |A + A^T| = {0:.3e})")]
    NotSkew(f64),

    #[error("CFL guard violated at step {step}: {cfl:.4} > {limit:.4}")]
    Cfl { step: usize, cfl: f64, limit: f64 },

    #[error("non-finite state detected at step {step}")]
    Blowup { step: usize },

    #[error("tracer {label} became non-finite at step {step}")]
    TracerNonFinite { label: usize, step: usize },

    #[error("unknown initial condition `{0}`")]
    UnknownInitialCondition(String),

    #[error("too few samples: need at least {need}, got {got}")]
    TooFewSamples { need: usize, got: usize },

    #[error("time grid is not uniform (step {index} differs by {deviation:.3e})")]
    NonUniformGrid { index: usize, deviation: f64 },

    #[error("inconsistent sampling: {0}")]
    Sampling(String),

    #[error("negative sample {value} at index {index} for a bracketed quantity")]
    NegativeSample { index: usize, value: f64 },

    #[error("sample time {time} is not before candidate blow-up time {candidate}")]
    PastCandidateTime { time: f64, candidate: f64 },

    #[error("hypothesis violated: {0}")]
    Hypothesis(String),

    #[error("oracle did not converge: {0}")]
    NoConvergence(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("snapshot format: {0}")]
    Snapshot(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Whether the error stems from invalid input rather than a failed
    /// computation.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::UnknownInitialCondition(_)
                | Error::InvalidGrid(_)
                | Error::EmptyRegion { .. }
                | Error::Hypothesis(_)
        )
    }
}
