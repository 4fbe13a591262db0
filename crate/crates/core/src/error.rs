use thiserror::Error;

/// Errors produced by the hedging engine.
#[derive(Debug, Error)]
pub enum EngineError {
    /// A mark function has a different length than the measure it is used with.
    #[error("mark function has {got} values but the measure has {expected} atoms")]
    IncompatibleFunction { expected: usize, got: usize },

    /// A scalar argument is out of its admissible range.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A discretization support touches or straddles zero, or is empty.
    #[error("invalid support: {0}")]
    InvalidSupport(String),

    /// Market parameters violate a structural constraint (e.g. psi <= -1).
    #[error("invalid model: {0}")]
    InvalidModel(String),

    /// Minimizer bounds require jump support on both sides of zero.
    #[error("minimizer bounds unavailable: {0}")]
    BoundsUnavailable(String),

    /// The drift/jump configuration admits no minimum of the generator.
    #[error("optimization not well-posed: {0}")]
    NotWellPosed(String),

    /// A solution was evaluated outside its time horizon.
    #[error("time {t} outside horizon [0, {horizon}]")]
    InvalidTime { t: f64, horizon: f64 },

    /// An iterative routine failed to reach its tolerance.
    #[error("numerical failure: {0}")]
    NonConvergence(String),
}

pub type Result<T> = std::result::Result<T, EngineError>;
