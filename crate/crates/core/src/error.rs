use std::path::PathBuf;

/// Errors produced by loading, training, indexing, and persistence.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("payload size mismatch: expected {expected} bytes, found {found}")]
    PayloadSize { expected: u64, found: u64 },
    #[error("non-finite value at row {0}")]
    NonFinite(usize),
    #[error("duplicate id {0:?}")]
    DuplicateId(String),
    #[error("id count mismatch: {ids} ids for {rows} rows")]
    IdCount { ids: usize, rows: usize },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("conflicting label for ({0},{1})")]
    ConflictingLabel(String, String),
    #[error("query {0} has no positive")]
    NoPositive(String),
    #[error("unknown {kind} id {id:?}")]
    UnknownId { kind: &'static str, id: String },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("empty input")]
    Empty,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("non-finite {term} loss at epoch {epoch}")]
    NonFiniteLoss { term: &'static str, epoch: usize },
    #[error("non-finite gradient in {0}")]
    NonFiniteGradient(String),
    #[error("config: {0}")]
    Config(String),
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),
    #[error("corrupt artifact: {0}")]
    Artifact(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn dim(expected: usize, got: usize) -> Self {
        Error::DimensionMismatch { expected, got }
    }
}
