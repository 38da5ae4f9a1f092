use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Shapes of matrices/vectors disagree with the declared process count.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid value: {0}")]
    InvalidValue(String),

    #[error("history window of width {width} is narrower than the required lag {needed}")]
    WindowTooNarrow { needed: usize, width: usize },

    #[error(
        "activation chain needs {bits} state bits but the limit is {max_bits}; \
         use the Monte Carlo engine instead"
    )]
    Capacity { bits: usize, max_bits: usize },

    #[error("power iteration did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("candidate is infeasible for process {process}: max linear predictor {max_eta} is not negative")]
    InfeasibleCandidate { process: usize, max_eta: f64 },

    #[error("estimation mode error: {0}")]
    Mode(String),

    #[error("estimation failed for process {process}: {reason}")]
    Estimation { process: usize, reason: String },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("ingestion error: {0}")]
    Ingest(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
