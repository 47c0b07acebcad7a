use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("horizon mismatch: {what} has horizon {found}, expected {expected}")]
    HorizonMismatch {
        what: &'static str,
        found: usize,
        expected: usize,
    },

    #[error("instance too large: {0}")]
    InstanceTooLarge(String),

    #[error("malformed continuation table: {0}")]
    MalformedTable(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
