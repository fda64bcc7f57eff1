use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("incompatible factors: {0}")]
    IncompatibleFactors(String),

    #[error("loss must be a 1x1 scalar node, got {0}x{1}")]
    NonScalarLoss(usize, usize),

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },

    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { expected: u16, found: u16 },

    #[error("truncated payload: header implies {expected} bytes, file has {found}")]
    TruncatedPayload { expected: usize, found: usize },

    #[error("malformed file: {0}")]
    Malformed(String),

    #[error("unknown attachment site {0}")]
    UnknownSite(String),

    #[error("adapter {name:?} already attached at {site}")]
    DuplicateAdapter { name: String, site: String },

    #[error("no adapter named {name:?} at {site}")]
    MissingAdapter { name: String, site: String },

    #[error("token {token} out of range for vocabulary of {vocab}")]
    TokenOutOfRange { token: u32, vocab: usize },

    #[error("sequence length {len} exceeds max_seq {max}")]
    SequenceTooLong { len: usize, max: usize },

    #[error("label {0:?} has no items")]
    EmptyLabel(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("zero variance input to {0}")]
    ZeroVariance(&'static str),

    #[error("row keys differ between tables: {0}")]
    MismatchedKeys(String),

    #[error("missing artifact: {0}")]
    MissingArtifact(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("io error at {path}: {source}")]
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
}
