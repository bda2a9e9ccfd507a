use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Broad class of a failure, used by front ends to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("missing configuration key `{0}`")]
    MissingKey(String),

    #[error("unknown configuration key `{0}`")]
    UnknownKey(String),

    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },

    #[error("invalid value for `{key}`: {message}")]
    InvalidValue { key: String, message: String },

    #[error("`{field}` = {value} violates bound: {bound}")]
    Bound {
        field: String,
        value: f64,
        bound: String,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("channel truncation did not reach {epsilon:e} within m_max = {m_max}; residual mass {residual:e}")]
    Truncation {
        m_max: usize,
        epsilon: f64,
        residual: f64,
    },

    #[error("no trajectory reached the screen: {0}")]
    EmptyImage(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::MissingKey(_)
            | Error::UnknownKey(_)
            | Error::Syntax { .. }
            | Error::InvalidValue { .. }
            | Error::Bound { .. } => ErrorKind::Config,
            Error::Domain(_)
            | Error::Truncation { .. }
            | Error::EmptyImage(_)
            | Error::Numerical(_) => ErrorKind::Numerical,
            Error::DimensionMismatch(_) | Error::Data(_) | Error::Io(_) => ErrorKind::Data,
        }
    }

    pub(crate) fn bound(field: &str, value: f64, bound: &str) -> Self {
        Error::Bound {
            field: field.to_string(),
            value,
            bound: bound.to_string(),
        }
    }
}
