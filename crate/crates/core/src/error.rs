use thiserror::Error;

/// Errors raised by model construction, simulation and analysis.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("trait `{id}`: {reason}")]
    InvalidTrait { id: String, reason: String },

    #[error("invalid kernel: {0}")]
    InvalidKernel(String),

    #[error(
        "fitness order violated at pair ({lower}, {upper}): f({upper_id}, {lower_id}) = {up_fitness}, f({lower_id}, {upper_id}) = {down_fitness}"
    )]
    OrderViolation {
        lower: usize,
        upper: usize,
        lower_id: String,
        upper_id: String,
        up_fitness: f64,
        down_fitness: f64,
    },

    #[error("empty trait chain")]
    EmptyChain,

    #[error("duplicate trait id `{0}`")]
    DuplicateTrait(String),

    #[error("unknown trait `{0}`")]
    UnknownTrait(String),

    #[error("rank {rank} is not occupied in the current configuration")]
    UnoccupiedSource { rank: usize },

    #[error("rank {rank} out of range for a chain of {len} traits")]
    RankOutOfRange { rank: usize, len: usize },

    #[error("negative state component {index}: {value}")]
    NegativeState { index: usize, value: f64 },

    #[error("step size underflow at t = {t} (h = {h})")]
    StepUnderflow { t: f64, h: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("degenerate regression grid: {0}")]
    DegenerateGrid(String),

    #[error("mutation law: {0}")]
    MutationLaw(String),

    #[error("scenario: {0}")]
    Scenario(String),

    #[error("trajectory: {0}")]
    Trajectory(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
