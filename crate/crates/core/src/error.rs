use thiserror::Error;

use crate::evolutionary::EvolutionarySolution;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("singular matrix: pivot magnitude {pivot:e} below threshold {threshold:e}")]
    SingularMatrix { pivot: f64, threshold: f64 },

    #[error("matrix is not symmetric: max asymmetry {asymmetry:e} exceeds {tolerance:e}")]
    NotSymmetric { asymmetry: f64, tolerance: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("sample {0} has non-positive weight")]
    ZeroWeight(usize),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("step matrix of sample {sample} is singular for step size {step:e}; use a finer time grid")]
    SingularStepMatrix { sample: usize, step: f64 },

    #[error("trajectory grid does not match: {0}")]
    GridMismatch(String),

    #[error(
        "solver did not converge in {} iterations (gradient norm {:e})",
        best.iterations,
        best.grad_norm
    )]
    MaxItersExceeded { best: Box<EvolutionarySolution> },

    #[error("conjugate gradient stalled after {iterations} iterations (relative residual {residual:e})")]
    CgStalled { iterations: usize, residual: f64 },

    #[error(
        "sample {0}: A(w) is singular, so A(w)x = B(w)u is not uniquely solvable; \
         the stationary solver requires B(w)v in Rank(A(w)) for all v, i.e. invertible A(w)"
    )]
    SingularSample(usize),

    #[error("the double-application stabilizability variant requires m = n (got m = {m}, n = {n})")]
    DoubleVariantRequiresSquareB { m: usize, n: usize },

    #[error("gain scan covers {0} entries; at most 4 are supported")]
    TooManyGainEntries(usize),
}
