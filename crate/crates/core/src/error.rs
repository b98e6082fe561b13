use thiserror::Error;

/// Errors surfaced by the solver and its kernels.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolverError {
    #[error("constraint Jacobian is rank deficient (smallest/largest singular value ratio {ratio:e})")]
    RankDeficient { ratio: f64 },
    #[error("non-finite value in {0}")]
    NonFiniteInput(&'static str),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("problem exposes no noiseless oracle")]
    MissingNoiselessOracle,
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("dataset generation failed: {0}")]
    DatasetGenerationFailed(String),
    #[error("Hessian approximation has zero norm")]
    ZeroHessianNorm,
    #[error("rescaled residuals stayed zero after {0} resamples")]
    DegenerateResiduals(usize),
    #[error("tangential subsolver missed the Cauchy fraction: reduction {reduction:e} > bound {bound:e}")]
    SubsolverFailure { reduction: f64, bound: f64 },
    #[error("eigen step requested without negative curvature (tau = {0:e})")]
    NotNegativeCurvature(f64),
    #[error("merit parameter loop exceeded {0} multiplications")]
    MeritLoopDiverged(usize),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("I/O error: {0}")]
    Io(String),
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T, E = SolverError> = std::result::Result<T, E>;

impl From<std::io::Error> for SolverError {
    fn from(err: std::io::Error) -> Self {
        SolverError::Io(err.to_string())
    }
}

impl From<csv::Error> for SolverError {
    fn from(err: csv::Error) -> Self {
        SolverError::Parse(err.to_string())
    }
}
