use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("correlation matrix is not positive semi-definite: pivot {pivot} has value {value:.3e}")]
    NotPositiveSemiDefinite { pivot: usize, value: f64 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("empty sample")]
    EmptySample,

    #[error("entropic functional overflows: exp(gamma * y) is not finite for gamma = {gamma}")]
    EntropicOverflow { gamma: f64 },

    #[error("score domain violated: {0}")]
    Domain(String),

    #[error("unknown model id '{0}'")]
    UnknownModel(String),

    #[error("no closed-form conditional for {functional} given {subset} in model '{model}'; registered: {registered}")]
    UnregisteredConditional {
        model: String,
        functional: String,
        subset: String,
        registered: String,
    },

    #[error("uncertainty term vanishes (mean baseline score {value:.3e}); the baseline score must be positive on this sample")]
    VanishingUncertainty { value: f64 },

    #[error("grid [{lo}, {hi}] does not cover [{need_lo}, {need_hi}]")]
    GridCoverage {
        lo: f64,
        hi: f64,
        need_lo: f64,
        need_hi: f64,
    },

    #[error("degenerate sample: {0}")]
    DegenerateSample(String),

    #[error("every Murphy grid point is undefined")]
    AllPointsUndefined,

    #[error("strictly positive responses required for b in {b_range}; found y = {value}")]
    PositivityRequired { b_range: String, value: f64 },

    #[error("curves share no defined grid point")]
    NoCommonPoints,

    #[error("at least {min} observations required, found {found}")]
    InsufficientSamples { min: usize, found: usize },

    #[error("observation {index} violates positivity: {detail}")]
    NonPositiveObservation { index: usize, detail: String },

    #[error("non-finite training loss at iteration {iteration}: {detail}")]
    NonFiniteLoss { iteration: usize, detail: String },

    #[error("serialization: {0}")]
    Serialization(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
