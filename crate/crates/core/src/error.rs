use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid rectangle: {0}")]
    InvalidRect(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid sample: {0}")]
    InvalidSample(String),

    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("parse error at data row {row}, column '{column}': {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("degenerate sample: {0}")]
    DegenerateSample(String),

    #[error("degenerate common support: {0}")]
    DegenerateSupport(String),

    #[error("invalid knot vector: {0}")]
    InvalidKnots(String),

    #[error("knot placement failed: {0}")]
    Placement(String),

    #[error("x = {x} lies outside the knot range [{lower}, {upper}]")]
    OutsideDomain { x: f64, lower: f64, upper: f64 },

    #[error("sieve dimension {k} is not below the {group} group size {n}")]
    Dimension {
        group: &'static str,
        k: usize,
        n: usize,
    },

    #[error(
        "singular design for the {group} arm: smallest singular value {smallest:e} \
         (largest {largest:e}, tolerance ratio 1e-10)"
    )]
    SingularDesign {
        group: &'static str,
        smallest: f64,
        largest: f64,
    },

    #[error("propensity trimming removed every observation")]
    DegenerateTrim,

    #[error("Sobol sequences are supported for 1..={max} dimensions, got {dim}")]
    UnsupportedDimension { dim: usize, max: usize },

    #[error("integrand returned {value} at {point:?}")]
    Integrand { point: Vec<f64>, value: f64 },

    #[error("bandwidth error: covariate dimension {dim} has zero variance")]
    Bandwidth { dim: usize },

    #[error("no Sobol point fell inside the band |h| < {eps} ({hits} hits out of {points})")]
    BandEmpty { eps: f64, hits: usize, points: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unknown model '{0}'; valid ids are M1..M15")]
    UnknownModel(String),

    #[error(
        "model {model}, n = {n}: {failures} of {reps} replications failed \
         (more than 20%); first failure: {first}"
    )]
    FailureRate {
        model: String,
        n: usize,
        failures: usize,
        reps: usize,
        first: String,
    },
}
