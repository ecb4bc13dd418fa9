use thiserror::Error;

/// Errors raised by the geometry, corrector, Bogovskii and flow modules.
#[derive(Debug, Error)]
pub enum Error {
    #[error("hole radius exp(-eps^-alpha) underflows for eps = {epsilon}, alpha = {alpha}; use a generalized radius schedule")]
    Underflow { epsilon: f64, alpha: f64 },

    #[error("invalid cut-off scale: {0}")]
    InvalidScale(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("no admissible hole center fits the domain")]
    EmptyConfiguration,

    #[error("jittered placement could not satisfy the separation constraints for center {index} after {attempts} draws")]
    JitterExhausted { index: usize, attempts: usize },

    #[error("quadrature resolution too coarse: {0}")]
    ResolutionTooCoarse(String),

    #[error("local patch too coarse: {0}")]
    PatchTooCoarse(String),

    #[error("right-hand side must have zero mean (mean = {mean:e}, norm = {norm:e})")]
    NonZeroMean { mean: f64, norm: f64 },

    #[error("linear solver did not converge after {iterations} iterations (relative residual {residual:e})")]
    SolverDivergence { iterations: usize, residual: f64 },

    #[error("time step {dt:e} exceeds the stability limit {limit:e}")]
    CflViolation { dt: f64, limit: f64 },

    #[error("negative density {value:e} in cell {cell}")]
    NegativeDensity { cell: usize, value: f64 },

    #[error("theta = {theta} must lie in (0, gamma - 1) with gamma = {gamma}")]
    ThetaOutOfRange { theta: f64, gamma: f64 },

    #[error("mismatched sampling: {0}")]
    MismatchedSampling(String),

    #[error("malformed field dump: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for errors caused by inputs that fail validation, as opposed to
    /// numerical failures during a run.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Underflow { .. }
                | Error::InvalidScale(_)
                | Error::InvalidConfig(_)
                | Error::EmptyConfiguration
                | Error::ResolutionTooCoarse(_)
                | Error::PatchTooCoarse(_)
                | Error::NonZeroMean { .. }
                | Error::ThetaOutOfRange { .. }
                | Error::MismatchedSampling(_)
                | Error::Format(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
