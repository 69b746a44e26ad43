use std::path::PathBuf;

use thiserror::Error;

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] ecgc_core::Error),
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Usage(String),
    #[error("output directory {} is locked by another run ({})", .0.display(), .0.join(crate::LOCK_FILE).display())]
    Locked(PathBuf),
    #[error("no summary row in {}", .0.display())]
    MissingSummary(PathBuf),
}

/// Error classes in exit-code order: class `i` exits with `10 + i`.
pub const ERROR_CLASSES: [&str; 33] = [
    "InvalidConfig",
    "Locked",
    "MissingSummary",
    "IoError",
    "MissingFile",
    "MalformedRow",
    "UnknownRhythmCode",
    "MalformedSignal",
    "EmptyDataset",
    "InvalidProportions",
    "LengthMismatch",
    "IndexOutOfRange",
    "UnknownAugmentation",
    "InsufficientAugmentations",
    "InvalidAttribute",
    "DegenerateStats",
    "DimensionMismatch",
    "MissingAttributes",
    "NoPeaksDetected",
    "WrongStrategy",
    "BatchTooLarge",
    "EmptyPositive",
    "ShapeMismatch",
    "NotScalar",
    "GraphReused",
    "NonFinite",
    "CorruptCheckpoint",
    "ZeroVector",
    "NoPositive",
    "MaskAsymmetry",
    "LabelOutOfRange",
    "SingleClass",
    "Usage",
];

impl CliError {
    pub fn class(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.class(),
            CliError::Config(_) => "InvalidConfig",
            CliError::Usage(_) => "Usage",
            CliError::Locked(_) => "Locked",
            CliError::MissingSummary(_) => "MissingSummary",
        }
    }

    /// Process exit code: 2 for usage errors (as clap uses), otherwise
    /// `10 +` the class position in [`ERROR_CLASSES`].
    pub fn exit_code(&self) -> i32 {
        exit_code_for(self.class())
    }
}

pub fn exit_code_for(class: &str) -> i32 {
    if class == "Usage" {
        return 2;
    }
    ERROR_CLASSES.iter().position(|c| *c == class).map(|i| 10 + i as i32).unwrap_or(1)
}
