use thiserror::Error;

use crate::ifs::ValidationReport;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain where the quantity is defined.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("malformed input: {0}")]
    Malformed(String),

    /// A computation hit its resource cap. `enclosure` carries the best
    /// `(lo, hi)` bounds reached when the computation produces one.
    #[error("resource limit: {what}")]
    Resource {
        what: String,
        enclosure: Option<(f64, f64)>,
    },

    #[error("model failed validation: {0}")]
    InvalidModel(ValidationReport),

    #[error("undefined: {0}")]
    Undefined(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn resource(what: impl Into<String>) -> Self {
        Error::Resource {
            what: what.into(),
            enclosure: None,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}
