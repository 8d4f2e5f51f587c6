//! Error types shared across the crate.

use thiserror::Error;

/// Failure to interpret a backend response against one of the response
/// grammars. Parsers never panic on arbitrary text; they return one of
/// these instead.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("format violation: {0}")]
    FormatViolation(String),
    /// The same member id was assigned to more than one cluster.
    #[error("member {0} assigned to more than one type")]
    DuplicateMember(u32),
    /// Every parsed proposal carried a confidence of zero or less.
    #[error("no proposal with positive confidence")]
    NoValidProposal,
}

/// Failure to obtain a completion from a backend.
#[derive(Debug, Error)]
pub enum BackendError {
    #[error("no fixture entry matches a {kind} request")]
    NoFixtureMatch { kind: &'static str },
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("rate limited; gave up after {0} attempts")]
    RateLimited(u32),
    #[error("backend returned an empty response")]
    EmptyResponse,
}

/// Memory store and persistence failures.
#[derive(Debug, Error)]
pub enum MemoryError {
    #[error("no trajectories provided")]
    EmptyInput,
    #[error("unknown goal type {0}")]
    UnknownGoalType(u32),
    #[error("unknown observation type {obs_type} under goal type {goal_type}")]
    UnknownObsType { goal_type: u32, obs_type: u32 },
    #[error("memory index is empty")]
    EmptyIndex,
    #[error("schema version {found} not supported (expected {expected})")]
    SchemaVersionMismatch { found: u32, expected: u32 },
    #[error("malformed memory file: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Environment failures. `InvalidAction` is non-terminal: the environment
/// state is unchanged and the message explains the rejection.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EnvError {
    #[error("{0}")]
    InvalidAction(String),
    #[error("goal not expressible in this environment: {0}")]
    UnparseableGoal(String),
    #[error("snapshot belongs to a different run")]
    StaleHandle,
    #[error("episode already finished")]
    EpisodeOver,
}

/// Crate-level error.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("backend produced an empty action")]
    EmptyAction,
    #[error("no input to operate on")]
    EmptyInput,
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
