use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("conjugate maximizer could not be bracketed for stress magnitude {magnitude}")]
    MaximizerNotBracketed { magnitude: f64 },

    #[error("negative density {0}")]
    NegativeDensity(f64),

    #[error("grid of {grid} points on axis {axis} cannot resolve the requested modes (need at least {required})")]
    ResolutionTooLow {
        axis: usize,
        grid: usize,
        required: usize,
    },

    #[error("grid field has {found} values, basis grid has {expected}")]
    GridMismatch { expected: usize, found: usize },

    #[error("coefficient vector has length {found}, expected {expected}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("mass matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("density positivity lost at t = {t}: min rho = {min_rho}")]
    PositivityLost { t: f64, min_rho: f64 },

    #[error("time step {dt} violates the CFL limit {limit} at t = {t}")]
    CflViolation { t: f64, dt: f64, limit: f64 },

    #[error("check requires the homogeneous Dirichlet (sine) basis family")]
    WrongBasisFamily,

    #[error("incomplete ledger: {0}")]
    IncompleteLedger(String),

    #[error("partition cell {0} contains no samples")]
    EmptyCell(usize),

    #[error("domination |F| <= G violated at sample {index}: |F| = {f}, G = {g}")]
    DominationViolated { index: usize, f: f64, g: f64 },

    #[error("resolution ladder mismatch: {0}")]
    LadderMismatch(String),

    #[error("step failed at t = {t}: {source}")]
    StepFailed { t: f64, source: Box<Error> },
}
