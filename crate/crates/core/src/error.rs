use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// `γ'` requested outside the interior of `dom γ`.
    #[error("argument {0} lies outside the interior of dom γ")]
    DomainBoundary(f64),

    #[error("quadrature did not meet tolerance on [{lo}, {hi}] within {subdivisions} subdivisions")]
    QuadratureDivergence { lo: f64, hi: f64, subdivisions: usize },

    /// The tail test found an integrand that does not decay against the reference measure.
    #[error("integrand is not integrable against the reference measure: {0}")]
    NonIntegrable(String),

    #[error("invalid measure: {0}")]
    InvalidMeasure(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Two independent estimators of the same quantity disagree beyond tolerance.
    #[error("estimates disagree: {first} vs {second}")]
    EstimateDisagreement { first: f64, second: f64 },

    #[error("constraint set does not meet the domain of the entropy")]
    Infeasible,

    #[error("no trial was accepted")]
    NoAcceptedTrials,

    #[error("csv: {0}")]
    Csv(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Csv(e.to_string())
    }
}
