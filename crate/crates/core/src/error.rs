use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch on {axis}: expected {expected}, found {found}")]
    ShapeMismatch {
        op: &'static str,
        axis: String,
        expected: String,
        found: String,
    },

    #[error("{op}: {msg}")]
    InvalidShape { op: &'static str, msg: String },

    #[error("{context}: non-finite value encountered")]
    NonFinite { context: String },

    #[error("{context}: label {label} out of range for {classes} classes")]
    LabelOutOfRange {
        context: &'static str,
        label: usize,
        classes: usize,
    },

    #[error("{context}: index {index} out of range for length {len}")]
    IndexOutOfRange {
        context: &'static str,
        index: usize,
        len: usize,
    },

    #[error("network spec: {}{msg}", layer.map(|l| format!("layer {l}: ")).unwrap_or_default())]
    InvalidSpec { layer: Option<usize>, msg: String },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u8),

    #[error("unsupported datatype code {0}")]
    UnsupportedDatatype(i32),

    #[error("unsupported file feature: {0}")]
    Unsupported(String),

    #[error("truncated or oversized payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error("weight file does not match network spec: {0}")]
    SpecMismatch(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("need at least {needed} distinct subjects, found {found}")]
    TooFewSubjects { needed: usize, found: usize },

    #[error("volume is constant; cannot normalize")]
    ConstantVolume,

    #[error("heterogeneous inputs: {0}")]
    Heterogeneous(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("invalid atlas: {0}")]
    InvalidAtlas(String),
}

impl Error {
    /// Short stable identifier, used as the machine-parseable prefix of CLI errors.
    pub fn code(&self) -> &'static str {
        match self {
            Error::ShapeMismatch { .. } | Error::InvalidShape { .. } => "shape",
            Error::NonFinite { .. } => "non-finite",
            Error::LabelOutOfRange { .. } => "label-range",
            Error::IndexOutOfRange { .. } => "index-range",
            Error::InvalidSpec { .. } => "spec",
            Error::InvalidParameter(_) => "parameter",
            Error::Io { .. } => "io",
            Error::BadMagic { .. } => "magic",
            Error::UnsupportedVersion(_) => "version",
            Error::UnsupportedDatatype(_) => "datatype",
            Error::Unsupported(_) => "unsupported",
            Error::Truncated { .. } => "truncated",
            Error::SpecMismatch(_) => "spec-mismatch",
            Error::Parse { .. } => "parse",
            Error::TooFewSubjects { .. } => "subjects",
            Error::ConstantVolume => "constant-volume",
            Error::Heterogeneous(_) => "heterogeneous",
            Error::Empty(_) => "empty",
            Error::InvalidAtlas(_) => "atlas",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(op: &'static str, msg: impl Into<String>) -> Self {
        Error::InvalidShape {
            op,
            msg: msg.into(),
        }
    }

    pub(crate) fn mismatch(
        op: &'static str,
        axis: impl Into<String>,
        expected: impl ToString,
        found: impl ToString,
    ) -> Self {
        Error::ShapeMismatch {
            op,
            axis: axis.into(),
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }
}
