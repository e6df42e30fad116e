use thiserror::Error;

/// Errors raised across the simulation and benchmark pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("basis dimension {dimension} exceeds the configured maximum of {limit} states")]
    DimensionOverflow { dimension: u128, limit: usize },

    #[error("site index {site} out of range for a lattice of {sites} sites")]
    SiteOutOfRange { site: usize, sites: usize },

    #[error("operation requires a {expected} basis")]
    BasisMode { expected: &'static str },

    #[error("lattice size mismatch: basis has {basis} sites, topology has {topology}")]
    SiteMismatch { basis: usize, topology: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("matrix is not Hermitian (max deviation {deviation:.3e})")]
    NotHermitian { deviation: f64 },

    #[error("vector is not normalized (norm² = {norm_sqr})")]
    NotNormalized { norm_sqr: f64 },

    #[error("too few levels for gap-ratio statistics: {levels} after windowing, need at least 3")]
    TooFewLevels { levels: usize },

    #[error("density matrix violates {property}: {detail}")]
    InvalidState { property: &'static str, detail: String },

    #[error("expectation value has imaginary part {imag:.3e}; observable or state is not Hermitian")]
    ComplexExpectation { imag: f64 },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("input {value} outside the admissible range {range}")]
    InputRange { value: f64, range: &'static str },

    #[error("NARMA recurrence diverged at step {step} (|y| = {value:.3e})")]
    Divergence { step: usize, value: f64 },

    #[error("normal matrix is singular; use a positive ridge parameter")]
    SingularNormalMatrix,

    #[error("linear algebra failure: {0}")]
    LinearAlgebra(String),

    #[error("not enough rows: need {needed}, have {available}")]
    InsufficientRows { needed: usize, available: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
