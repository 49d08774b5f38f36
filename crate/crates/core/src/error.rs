use crate::identifier::{InvalidRef, ParseError};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    InvalidRef(#[from] InvalidRef),

    #[error("not found: {0}")]
    NotFound(String),
    #[error("no channel mapping for {0}")]
    NoMapping(String),
    #[error("unknown generic signal {0}")]
    UnknownGeneric(String),
    #[error("unknown record {0}")]
    UnknownRecord(i64),
    #[error("unknown axis generic signal id {0}")]
    UnknownAxis(i64),
    #[error("generic signal name {name:?} already exists for source {data_source:?}")]
    DuplicateName { name: String, data_source: String },
    #[error("alias {0:?} already in use")]
    DuplicateAlias(String),
    #[error(
        "revision {revision} of generic {generic_id} in record {record_number} was not allocated"
    )]
    RevisionNotAllocated {
        generic_id: i64,
        record_number: i64,
        revision: i64,
    },
    #[error("dangling axis reference: {0}")]
    DanglingAxis(String),
    #[error("data file {0} is still open")]
    FileStillOpen(i64),
    #[error("channel {key} already has a mapping valid from record {valid_from_record}")]
    DuplicateValidFrom { key: String, valid_from_record: i64 },
    #[error("signal kind mismatch: {0}")]
    KindMismatch(String),
    #[error("LINEAR signal {0} needs an explicit length")]
    LengthRequired(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("data file is closed")]
    FileClosed,
    #[error("data file is already closed")]
    AlreadyClosed,
    #[error("data file {0} is open")]
    FileOpen(i64),
    #[error("dataset {0:?} already exists in this file")]
    DuplicateDataset(String),
    #[error("payload is {actual} bytes, shape and dtype need {expected}")]
    ShapePayloadMismatch { expected: u64, actual: u64 },
    #[error("checksum mismatch in {0}")]
    ChecksumMismatch(String),
    #[error("invalid container: {0}")]
    InvalidFormat(String),

    #[error("task graph would contain a cycle: {}", .0.join(" -> "))]
    CycleDetected(Vec<String>),
    #[error("signal {signal} is already produced by task {task:?}")]
    DuplicateProducer { task: String, signal: i64 },
    #[error("task {0:?} already exists")]
    DuplicateTask(String),
    #[error("invalid task: {0}")]
    InvalidTask(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("storage failure: {0}")]
    Storage(String),
}

impl Error {
    /// Stable machine-readable name, used on the wire and in CLI messages.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Parse(ParseError::Syntax { .. }) => "SyntaxError",
            Error::Parse(ParseError::UnknownSchema(_)) => "UnknownSchema",
            Error::InvalidRef(_) => "InvalidRef",
            Error::NotFound(_) => "NotFound",
            Error::NoMapping(_) => "NoMapping",
            Error::UnknownGeneric(_) => "UnknownGeneric",
            Error::UnknownRecord(_) => "UnknownRecord",
            Error::UnknownAxis(_) => "UnknownAxis",
            Error::DuplicateName { .. } => "DuplicateName",
            Error::DuplicateAlias(_) => "DuplicateAlias",
            Error::RevisionNotAllocated { .. } => "RevisionNotAllocated",
            Error::DanglingAxis(_) => "DanglingAxis",
            Error::FileStillOpen(_) => "FileStillOpen",
            Error::DuplicateValidFrom { .. } => "DuplicateValidFrom",
            Error::KindMismatch(_) => "KindMismatch",
            Error::LengthRequired(_) => "LengthRequired",
            Error::ShapeMismatch(_) => "ShapeMismatch",
            Error::FileClosed => "FileClosed",
            Error::AlreadyClosed => "AlreadyClosed",
            Error::FileOpen(_) => "FileOpen",
            Error::DuplicateDataset(_) => "DuplicateDataset",
            Error::ShapePayloadMismatch { .. } => "ShapePayloadMismatch",
            Error::ChecksumMismatch(_) => "ChecksumMismatch",
            Error::InvalidFormat(_) => "InvalidFormat",
            Error::CycleDetected(_) => "CycleDetected",
            Error::DuplicateProducer { .. } => "DuplicateProducer",
            Error::DuplicateTask(_) => "DuplicateTask",
            Error::InvalidTask(_) => "InvalidTask",
            Error::InvalidArgument(_) => "InvalidArgument",
            Error::Storage(_) => "StorageFailure",
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Storage(e.to_string())
    }
}

impl From<rusqlite::Error> for Error {
    fn from(e: rusqlite::Error) -> Self {
        Error::Storage(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Storage(format!("json: {e}"))
    }
}
