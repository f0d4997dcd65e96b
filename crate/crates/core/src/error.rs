use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error("refinement closure exceeded depth bound {depth}")]
    RefinementFailure { depth: usize },

    #[error("mesh lineage mismatch: {0}")]
    Lineage(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: String, found: String },

    #[error("iterative solver stagnated after {iterations} iterations (relative residual {residual:.3e})")]
    SolverStagnation { iterations: usize, residual: f64 },

    #[error("non-finite weight {value} at quadrature point ({x:.3e}, {y:.3e}, {z:.3e})")]
    NonFiniteWeight { value: f64, x: f64, y: f64, z: f64 },

    #[error("density must be non-negative, got {0}")]
    NegativeDensity(f64),

    #[error("reduced Cayley system is singular (condition number {condition:.3e})")]
    StepFailure { condition: f64 },

    #[error("gradient flow stalled at dt = {dt:.3e} (last residual {residual:.3e})")]
    FlowStalled { dt: f64, residual: f64 },

    #[error("orbital Gram matrix is rank deficient (smallest eigenvalue {min_eigenvalue:.3e})")]
    RankDeficient { min_eigenvalue: f64 },

    #[error("dense oracle size cap exceeded: {0}")]
    OracleSizeCap(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Short machine-readable kind, used as the `termination` tag of aborted runs.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidDomain(_) => "invalid-domain",
            Error::RefinementFailure { .. } => "refinement-failure",
            Error::Lineage(_) => "lineage",
            Error::DimensionMismatch { .. } => "dimension-mismatch",
            Error::SolverStagnation { .. } => "solver-stagnation",
            Error::NonFiniteWeight { .. } => "assembly",
            Error::NegativeDensity(_) => "domain",
            Error::StepFailure { .. } => "step-failure",
            Error::FlowStalled { .. } => "flow-stalled",
            Error::RankDeficient { .. } => "rank-deficiency",
            Error::OracleSizeCap(_) => "oracle-size-cap",
            Error::Config(_) => "config",
            Error::Io { .. } => "io",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
