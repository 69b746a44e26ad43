use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the library can report.
///
/// [`Error::class`] gives a stable machine-readable name for each variant,
/// which the command-line driver prints ahead of the human-readable detail.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("missing file: {0}")]
    MissingFile(PathBuf),
    #[error("malformed manifest row at line {line}: {reason}")]
    MalformedRow { line: usize, reason: String },
    #[error("unknown rhythm code {0:?}")]
    UnknownRhythmCode(String),
    #[error("malformed signal file {path}: {reason}")]
    MalformedSignal { path: PathBuf, reason: String },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("invalid proportions: {0}")]
    InvalidProportions(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("signal length {len} is not divisible into {segments} segments of equal length (expected {expected} samples)")]
    LengthMismatch { len: usize, segments: usize, expected: usize },
    #[error("index {index} out of range 0..{bound}")]
    IndexOutOfRange { index: usize, bound: usize },
    #[error("augmentation {0} is not enabled")]
    UnknownAugmentation(String),
    #[error("need at least two enabled augmentations, found {0}")]
    InsufficientAugmentations(usize),

    #[error("invalid attribute vector: {0}")]
    InvalidAttribute(String),
    #[error("degenerate attribute statistics: {0}")]
    DegenerateStats(String),
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("records without attributes: {0:?}")]
    MissingAttributes(Vec<String>),
    #[error("no R-peaks detected in record {0}")]
    NoPeaksDetected(String),

    #[error("group key requested for non-group strategy {0}")]
    WrongStrategy(String),
    #[error("batch of {requested} anchors exceeds {available} available records")]
    BatchTooLarge { requested: usize, available: usize },
    #[error("view {0} has no positive partner")]
    EmptyPositive(usize),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("graph already consumed by a previous backward pass")]
    GraphReused,
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("vector has zero norm")]
    ZeroVector,
    #[error("row {0} of the positive mask has no positive entry")]
    NoPositive(usize),
    #[error("positive mask is not symmetric with zero diagonal: {0}")]
    MaskAsymmetry(String),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("AUROC needs both classes present ({positives} positives, {negatives} negatives)")]
    SingleClass { positives: usize, negatives: usize },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Stable variant name, e.g. `ShapeMismatch`.
    pub fn class(&self) -> &'static str {
        match self {
            Error::Io { .. } => "IoError",
            Error::MissingFile(_) => "MissingFile",
            Error::MalformedRow { .. } => "MalformedRow",
            Error::UnknownRhythmCode(_) => "UnknownRhythmCode",
            Error::MalformedSignal { .. } => "MalformedSignal",
            Error::EmptyDataset => "EmptyDataset",
            Error::InvalidProportions(_) => "InvalidProportions",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::LengthMismatch { .. } => "LengthMismatch",
            Error::IndexOutOfRange { .. } => "IndexOutOfRange",
            Error::UnknownAugmentation(_) => "UnknownAugmentation",
            Error::InsufficientAugmentations(_) => "InsufficientAugmentations",
            Error::InvalidAttribute(_) => "InvalidAttribute",
            Error::DegenerateStats(_) => "DegenerateStats",
            Error::DimensionMismatch { .. } => "DimensionMismatch",
            Error::MissingAttributes(_) => "MissingAttributes",
            Error::NoPeaksDetected(_) => "NoPeaksDetected",
            Error::WrongStrategy(_) => "WrongStrategy",
            Error::BatchTooLarge { .. } => "BatchTooLarge",
            Error::EmptyPositive(_) => "EmptyPositive",
            Error::ShapeMismatch(_) => "ShapeMismatch",
            Error::NotScalar(_) => "NotScalar",
            Error::GraphReused => "GraphReused",
            Error::NonFinite(_) => "NonFinite",
            Error::CorruptCheckpoint(_) => "CorruptCheckpoint",
            Error::ZeroVector => "ZeroVector",
            Error::NoPositive(_) => "NoPositive",
            Error::MaskAsymmetry(_) => "MaskAsymmetry",
            Error::LabelOutOfRange { .. } => "LabelOutOfRange",
            Error::SingleClass { .. } => "SingleClass",
        }
    }
}
