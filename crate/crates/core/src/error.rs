use thiserror::Error;

/// Errors raised by the learners and the data pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("labels contain a single class ({present}); both 0 and 1 are required")]
    DegenerateLabels { present: u8 },

    #[error("linear system is singular after jitter escalation (last jitter {jitter:e})")]
    Singular { jitter: f64 },

    #[error("candidate {candidate} failed: {source}")]
    Candidate {
        candidate: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("did not converge: {0}")]
    NotConverged(String),

    #[error("all {0} candidates failed to solve")]
    AllCandidatesFailed(usize),

    #[error("fold {fold} has a single class after stratification")]
    Stratification { fold: usize },

    #[error("insufficient data: {0}")]
    Insufficient(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("model format error at line {line}: {msg}")]
    Format { line: usize, msg: String },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
