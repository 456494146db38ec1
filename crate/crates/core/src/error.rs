use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("malformed header: expected {expected}, found {found}")]
    Header { expected: String, found: String },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("duplicate prediction row for series {series_id}, step {step}, event {event}")]
    DuplicatePrediction {
        series_id: String,
        step: u64,
        event: String,
    },

    #[error("column mismatch: missing [{}], extra [{}]", missing.join(", "), extra.join(", "))]
    ColumnMismatch {
        missing: Vec<String>,
        extra: Vec<String>,
    },

    #[error("training data has no examples of class {0}")]
    MissingClass(u8),

    #[error("nothing to score: no ground-truth events")]
    NothingToScore,

    #[error("schedule collision: {0}")]
    Collision(String),

    #[error("model format error: {0}")]
    Model(String),
}
