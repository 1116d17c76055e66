use crate::diagnostics::DecayFit;

/// Errors shared by every module of the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A state and a grid disagree on the number of sample nodes.
    #[error("incompatible grids: expected {expected} nodes, got {got}")]
    IncompatibleGrids { expected: usize, got: usize },

    /// Target density vanishes away from the endpoint, so the hazard
    /// `-p1*'/p1*` is undefined there.
    #[error("singular target: p1* vanishes at interior x = {x}")]
    SingularTarget { x: f64 },

    #[error("invalid rate: {0}")]
    InvalidRate(String),

    /// Staged plans require `alpha >= p1*(0)` so the feedback hazard keeps
    /// the divergent-integral property of an admissible repair rate.
    #[error("alpha = {alpha} below admissible minimum {min}")]
    AlphaTooSmall { alpha: f64, min: f64 },

    #[error("step size: {0}")]
    StepSize(String),

    #[error("invalid initial state: {0}")]
    InvalidInitial(String),

    #[error("invalid trajectory: {0}")]
    InvalidTrajectory(String),

    /// A precondition of the boundedness estimate does not hold
    /// (for example `t_f <= 2 ||p1*||_L1`).
    #[error("hypothesis not satisfied: {0}")]
    HypothesisNotSatisfied(String),

    /// The log-linear regression did not produce a trustworthy decay rate;
    /// the partial fit is carried along for inspection.
    #[error("decay fit unreliable (r^2 = {})", partial.r_squared)]
    FitUnreliable { partial: DecayFit },

    #[error("table format: {0}")]
    TableFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
