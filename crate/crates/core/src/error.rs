use thiserror::Error;

/// Errors raised by model construction, propagation and estimation.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid spin multiplicity {0} (must be >= 2)")]
    InvalidMultiplicity(usize),

    #[error("factor index {index} out of range for a layout with {factors} factors")]
    FactorIndex { index: usize, factors: usize },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("unsupported spin system: {0}")]
    UnsupportedSystem(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("negative time {0} us")]
    NegativeTime(f64),

    #[error("invalid integrator configuration: {0}")]
    Config(String),

    #[error("horizon too short: trace {trace:.3e} still above cutoff at t_max = {t_max} us with no escape channel")]
    Horizon { trace: f64, t_max: f64 },

    #[error("degenerate probe: integrated state has trace {0:.3e}")]
    DegenerateProbe(f64),

    #[error("degenerate measurement statistics: singlet probability {0} at the boundary with non-zero slope")]
    DegenerateStatistics(f64),

    #[error("numerical derivative is not Hermitian and traceless (defect {0:.3e})")]
    NumericalDerivative(f64),

    #[error("QCRB ratio undefined: quantum Fisher information {0:.3e} is not positive")]
    UndefinedRatio(f64),

    #[error("anisotropy undefined: {0}")]
    Anisotropy(String),

    #[error("angular precision unbounded: Fisher information {0:.3e} is not positive")]
    InfinitePrecision(f64),

    #[error("model configuration error: {0}")]
    ModelConfig(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
