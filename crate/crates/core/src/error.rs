use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}: empty file")]
    EmptyFile { path: PathBuf },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("class index {index} out of range for {classes} classes")]
    ClassOutOfRange { index: usize, classes: usize },

    #[error("non-finite feature value at sample {sample}, component {component}")]
    NonFinite { sample: usize, component: usize },

    #[error("class {0:?} has no samples")]
    EmptyClass(String),

    #[error("no majority class: every class has fewer than {m_v} samples")]
    NoMajorityClass { m_v: usize },

    #[error("zero-norm vector: cosine similarity is undefined")]
    ZeroNorm,

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// Process exit code: 1 configuration, 2 data, 3 runtime.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::Parse { .. }
            | Error::EmptyFile { .. }
            | Error::DimensionMismatch { .. }
            | Error::ClassOutOfRange { .. }
            | Error::NonFinite { .. }
            | Error::EmptyClass(_)
            | Error::NoMajorityClass { .. }
            | Error::ZeroNorm
            | Error::LengthMismatch { .. }
            | Error::EmptyDataset => 2,
            Error::Context { source, .. } => source.exit_code(),
            Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => 2,
            Error::Io { .. } => 3,
        }
    }
}
