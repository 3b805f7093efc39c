use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument fell outside the operation's domain.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("tensor shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("singular camera configuration: {0}")]
    SingularConfiguration(String),

    #[error("camera range unsatisfiable: {attempts} samples rejected")]
    UnsatisfiableRange { attempts: usize },

    #[error("need at least 4 correspondences, got {0}")]
    InsufficientData(usize),

    #[error("degenerate configuration: {0}")]
    Degenerate(String),

    /// The homogeneous denominator vanished: the point lies on the horizon.
    #[error("point maps to infinity (on the horizon)")]
    AtInfinity,

    #[error("training diverged in {context}")]
    Divergence { context: String },

    #[error("integrity check failed for item {id}: {reason}")]
    Integrity { id: u64, reason: String },

    #[error("format error in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl ToString) -> Self {
        Error::Format { path: path.into(), reason: reason.to_string() }
    }

    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape { op, detail: detail.into() }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Domain(_) | Error::Shape { .. } => 2,
            Error::Integrity { .. } | Error::Format { .. } | Error::Io { .. } => 3,
            Error::SingularConfiguration(_)
            | Error::UnsatisfiableRange { .. }
            | Error::InsufficientData(_)
            | Error::Degenerate(_)
            | Error::AtInfinity
            | Error::Divergence { .. } => 4,
        }
    }
}
