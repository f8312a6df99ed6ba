use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate geometry: {0}")]
    Degenerate(String),

    /// `|axis·λ|` fell below the sign threshold and the tie-break policy
    /// asks the caller to resolve it.
    #[error("sign undefined: |axis . lambda| = {0:e}")]
    SignUndefined(f64),

    #[error("index {index} out of range (len {len}) for {what}")]
    IndexOutOfRange { what: &'static str, index: usize, len: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("empty event stream")]
    EmptyStream,

    #[error("conditioning event has zero probability: {0}")]
    ZeroConditioningEvent(String),

    #[error("every conditioning event of {0} fell below the probability floor")]
    AllConditioningEventsEmpty(String),

    #[error("invalid table: {0}")]
    Table(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}
