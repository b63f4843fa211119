use std::path::PathBuf;

use crate::signal::FaultLabel;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid signal: {0}")]
    InvalidSignal(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("signal too short: {len} samples, need at least {required}")]
    SignalTooShort { len: usize, required: usize },

    #[error("empty input")]
    EmptyInput,

    #[error("template incomplete: {0}")]
    TemplateIncomplete(String),

    #[error("malformed corpus line {line}: {reason}")]
    MalformedLine { line: usize, reason: String },

    #[error("corpus line {line} is missing key {key:?}")]
    MissingKey { line: usize, key: String },

    #[error("missing column {0:?}")]
    MissingColumn(String),

    #[error("non-numeric cell at row {row}: {value:?}")]
    NonNumericCell { row: usize, value: String },

    #[error("file size {len} is not a multiple of the {elem}-byte element size")]
    SizeMismatch { len: usize, elem: usize },

    #[error("not a MAT-file level 5: {0}")]
    BadMagic(String),

    #[error("unsupported MAT element: type code {0}")]
    UnsupportedElement(u32),

    #[error("variable {name:?} not found (found: {found:?})")]
    VariableNotFound { name: String, found: Vec<String> },

    #[error("corrupt MAT element at byte offset {offset}: {reason}")]
    CorruptElement { offset: usize, reason: String },

    #[error("label {label} is not part of dataset {dataset:?} label space")]
    ManifestLabelError { dataset: String, label: FaultLabel },

    #[error("manifest: {0}")]
    Manifest(String),

    #[error("manifest entry errors: {}", format_entry_errors(.0))]
    ManifestEntries(Vec<(usize, Error)>),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn format_entry_errors(errs: &[(usize, Error)]) -> String {
    errs.iter()
        .map(|(i, e)| format!("entry {i}: {e}"))
        .collect::<Vec<_>>()
        .join("; ")
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
