use std::path::PathBuf;

/// Errors produced by the pipeline and its file formats.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("point is behind the camera (z = {z:.3e} m)")]
    BehindCamera { z: f64 },

    #[error("config error in {path}: field `{field}`: {message}")]
    Config {
        path: PathBuf,
        field: String,
        message: String,
    },

    #[error("{path}:{line}: {message}")]
    Data {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}: empty input")]
    EmptyInput { path: PathBuf },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Process exit status: 2 configuration, 3 data, 4 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } | Error::InvalidArgument(_) => 2,
            Error::Numeric(_) => 4,
            Error::Data { .. }
            | Error::EmptyInput { .. }
            | Error::Io { .. }
            | Error::BehindCamera { .. } => 3,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
