use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("failed to parse system spec: {0}")]
    Parse(#[from] serde_json::Error),

    #[error("invalid {field}: {reason}")]
    Invalid { field: String, reason: String },

    #[error("unresolved profile '{id}' at {field}")]
    UnresolvedProfile { field: String, id: String },

    #[error("unknown resource '{0}'")]
    UnknownResource(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("batch does not match system: {0}")]
    BatchMismatch(String),

    #[error("need at least {required} values, got {got}")]
    TooFewSamples { required: usize, got: usize },

    #[error("horizon of {horizon} hours is not divisible by {hours_per_day} hours per day")]
    IndivisibleHorizon { horizon: usize, hours_per_day: usize },

    #[error("empty CVaR tail (beta = {beta}, n = {n})")]
    EmptyTail { beta: f64, n: usize },

    #[error("oracle unsupported: {0}")]
    OracleUnsupported(String),

    #[error("irregular baseline: load equals available capacity in hour {hour} (state probability {probability})")]
    IrregularBaseline { hour: usize, probability: f64 },

    #[error("baseline is perfectly adequate (metric = {0}); accreditation needs a baseline shortfall")]
    AdequateBaseline(f64),

    #[error("baseline relative standard error {rse:.4} exceeds ceiling {ceiling}")]
    NoisyBaseline { rse: f64, ceiling: f64 },

    #[error("perturbation step must be positive, got {0}")]
    NonPositiveStep(f64),

    #[error("resource '{resource}' would have negative capacity {capacity_mw} MW at the lower difference point")]
    NegativeCapacity { resource: String, capacity_mw: f64 },

    #[error("IPA is unsupported for storage directions; use finite differences")]
    IpaStorage,

    #[error("{0} is only defined for the unserved-energy metric")]
    RequiresUnservedEnergy(&'static str),

    #[error("no sign change in ELCC bracket: {0}")]
    NoSignChange(String),

    #[error("resource '{0}' is statistically indistinguishable from a zero-value resource")]
    IndistinguishableFromZero(String),

    #[error("empty {0}")]
    Empty(&'static str),
}

impl Error {
    /// Errors caused by bad input (spec, config, arguments) rather than by a failed computation.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Io { .. }
                | Error::Parse(_)
                | Error::Invalid { .. }
                | Error::UnresolvedProfile { .. }
                | Error::UnknownResource(_)
                | Error::IndivisibleHorizon { .. }
                | Error::OracleUnsupported(_)
                | Error::NonPositiveStep(_)
                | Error::Empty(_)
                | Error::RequiresUnservedEnergy(_)
        )
    }

    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Invalid {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
