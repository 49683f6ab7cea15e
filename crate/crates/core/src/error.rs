use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("verb `{0}` does not change object state")]
    NonStateChangingVerb(String),
    #[error("no transition rule for verb `{verb}` and noun `{noun}`")]
    NoRule { verb: String, noun: String },
    #[error("frame position {pos} outside segment of length {len}")]
    OutOfRange { pos: usize, len: usize },
    #[error("state {0} is both static and part of the transition")]
    StateCollision(usize),
    #[error("unknown {table} `{name}`")]
    UnknownSymbol { table: &'static str, name: String },
    #[error("row {row}: {reason}")]
    MalformedRow { row: usize, reason: String },
    #[error("image size {0} is below the minimum of 16")]
    BadSize(usize),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("config mismatch: {0}")]
    ConfigMismatch(String),
    #[error("class index {index} out of range for {len} classes")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("graph error: {0}")]
    Graph(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("format error: {0}")]
    Format(String),
    #[error("unsupported version {found} (this build reads version {expected})")]
    Version { found: u32, expected: u32 },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("invalid value for `{key}`: {msg}")]
    InvalidValue { key: String, msg: String },
    #[error("data error: {0}")]
    Data(String),
    #[error("label error: {0}")]
    Label(String),
    #[error("no many-shot classes for task {0}")]
    EmptyManyShot(&'static str),
    #[error("invalid ledger: {0}")]
    InvalidLedger(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
