use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: invalid manifest: {message}")]
    Manifest { path: PathBuf, message: String },

    #[error("{path}: file not found")]
    MissingFile { path: PathBuf },

    #[error("{path}: size mismatch: expected {expected} bytes, found {actual}")]
    SizeMismatch {
        path: PathBuf,
        expected: u64,
        actual: u64,
    },

    #[error("{source_name}: non-finite value at row {row}, column {col}")]
    NonFinite {
        source_name: String,
        row: usize,
        col: usize,
    },

    #[error("{source_name}: label {label} at row {row} is out of range for {num_classes} classes")]
    LabelOutOfRange {
        source_name: String,
        row: usize,
        label: u32,
        num_classes: usize,
    },

    #[error("{source_name}: invalid probability row {row}: {reason}")]
    InvalidProbabilityRow {
        source_name: String,
        row: usize,
        reason: String,
    },

    #[error("{source_name}: non-positive perplexity {value} at row {row}, column {col}")]
    NonPositivePerplexity {
        source_name: String,
        row: usize,
        col: usize,
        value: f32,
    },

    #[error(
        "{source_name}: ragged row at line {line}: expected {expected} columns, found {found}"
    )]
    RaggedRow {
        source_name: String,
        line: usize,
        expected: usize,
        found: usize,
    },

    #[error("{source_name}: cannot parse {token:?} at row {row}, column {col}")]
    Parse {
        source_name: String,
        row: usize,
        col: usize,
        token: String,
    },

    #[error("{what}: expected {expected}, found {found}")]
    ShapeMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("pack has no {0}")]
    MissingInput(&'static str),

    #[error("layer index {index} out of range for {layers} layers")]
    LayerOutOfRange { index: usize, layers: usize },

    #[error("k = {k} exceeds the {available} available reference samples")]
    KTooLarge { k: usize, available: usize },

    #[error("budget fraction {0} is outside (0, 1]")]
    InvalidBudget(f64),

    #[error("constant input vector: rank correlation is undefined")]
    ConstantVector,

    #[error("index {index} out of range for {n} samples")]
    IndexOutOfRange { index: usize, n: usize },

    #[error("duplicate index {0} in subset")]
    DuplicateIndex(usize),

    #[error("{0}")]
    InvalidArgument(String),

    #[error("{0}")]
    Usage(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) | Error::LayerOutOfRange { .. } => 2,
            Error::Io { .. }
            | Error::Manifest { .. }
            | Error::MissingFile { .. }
            | Error::SizeMismatch { .. }
            | Error::NonFinite { .. }
            | Error::LabelOutOfRange { .. }
            | Error::InvalidProbabilityRow { .. }
            | Error::NonPositivePerplexity { .. }
            | Error::RaggedRow { .. }
            | Error::Parse { .. }
            | Error::ShapeMismatch { .. }
            | Error::MissingInput(_) => 3,
            Error::KTooLarge { .. }
            | Error::InvalidBudget(_)
            | Error::ConstantVector
            | Error::IndexOutOfRange { .. }
            | Error::DuplicateIndex(_)
            | Error::InvalidArgument(_) => 4,
        }
    }
}
