use thiserror::Error;

/// Errors raised by validation, estimation and the inference routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("pair {pair}: encouragement not one-per-pair (z = {z1}, {z2})")]
    Encouragement { pair: String, z1: u8, z2: u8 },

    #[error("pair {pair}: non-binary exposure {value}")]
    NonBinaryDose { pair: String, value: f64 },

    #[error("pair {pair}: exposure {value} outside [0, 1]")]
    DoseOutOfRange { pair: String, value: f64 },

    #[error("pair {pair}: non-finite outcome")]
    NonFiniteOutcome { pair: String },

    #[error("pair {pair}: non-finite covariate")]
    NonFiniteCovariate { pair: String },

    #[error("pair {pair}: ragged covariates (expected {expected}, found {found})")]
    RaggedCovariates { pair: String, expected: usize, found: usize },

    #[error("duplicate pair id {0}")]
    DuplicatePairId(String),

    #[error("need at least {needed} pairs, found {found}")]
    TooFewPairs { needed: usize, found: usize },

    #[error("instrument has no net effect on exposure")]
    DegenerateInstrument,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("design wider than sample: {columns} columns for {n} pairs")]
    DesignTooWide { columns: usize, n: usize },

    #[error("leverage of row {row} equals one; residual undefined")]
    UnitLeverage { row: usize },

    #[error("malformed pairing: {0}")]
    MalformedPairing(String),

    #[error("exact enumeration refused for n = {n} (limit {limit})")]
    EnumerationTooLarge { n: usize, limit: usize },

    #[error("non-binary outcome in pair {pair}")]
    NonBinaryOutcome { pair: String },

    #[error("no value of the effect ratio is retained at this level")]
    EmptyInterval,

    #[error("quadrature failed: {0}")]
    Quadrature(String),

    #[error("input error: {0}")]
    Input(String),
}

pub type Result<T> = std::result::Result<T, Error>;
