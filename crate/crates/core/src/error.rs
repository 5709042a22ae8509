use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("degree cutoff {requested} exceeds the resolvable band {max} of the node set")]
    BandExceeded { requested: usize, max: usize },

    #[error("input has no harmonic coefficients; call decompose first")]
    Undecomposed,

    #[error("input must have zero mean (mean component {mean:e})")]
    NonzeroMean { mean: f64 },

    #[error("kernel obstruction: V0 content {v0:e}, V1 content {v1:e} (relative to the input norm)")]
    KernelObstruction { v0: f64, v1: f64 },

    #[error("profile amplitude phi0(p) is zero; the operator is not invertible")]
    ZeroAmplitude,

    #[error("zero field")]
    ZeroField,

    #[error("curvature symmetry violated: {identity} (residual {residual:e})")]
    Symmetry { identity: &'static str, residual: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("{what} did not converge after {iterations} iterations (residual {residual:e})")]
    NotConverged { what: &'static str, iterations: usize, residual: f64 },

    #[error("need at least {need} samples, got {got}")]
    TooFewSamples { need: usize, got: usize },

    #[error("{0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
