use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid routing spec: {0}")]
    InvalidSpec(String),

    #[error("{what} index {index} out of range (limit {limit})")]
    OutOfRange {
        what: &'static str,
        index: usize,
        limit: usize,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("every target position is masked; nothing to average")]
    DegenerateBatch,

    #[error("parameter trees do not line up: {0}")]
    TreeMismatch(String),

    #[error("schedule error: {0}")]
    Schedule(String),

    #[error("layout error: {0}")]
    Layout(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn out_of_range(what: &'static str, index: usize, limit: usize) -> Self {
        Error::OutOfRange { what, index, limit }
    }
}
