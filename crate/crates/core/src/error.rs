use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("unknown document id `{0}`")]
    UnknownId(String),

    #[error("degenerate graph: {0}")]
    DegenerateGraph(String),

    #[error("zero degree at row {0}")]
    DegenerateDegree(usize),

    #[error("cannot pool: every position is masked")]
    DegeneratePool,

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("out of range: {0}")]
    Range(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("contrastive loss has no positive pairs")]
    EmptyNumerator,

    #[error("contrastive loss has no negative pairs")]
    EmptyDenominator,

    #[error("non-finite loss at step {step}: {detail}")]
    NonFinite { step: usize, detail: String },

    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
