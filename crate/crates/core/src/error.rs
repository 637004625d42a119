use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Input with the wrong shape, length or index range.
    #[error("rejected input: {0}")]
    RejectedInput(String),

    /// NaN / Inf encountered where finite values are required.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Inconsistent or invalid configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// Malformed file contents; `field` names the offending part.
    #[error("format error in {field}: {detail}")]
    Format { field: String, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn rejected(msg: impl Into<String>) -> Self {
        Error::RejectedInput(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn format(field: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Format {
            field: field.into(),
            detail: detail.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
