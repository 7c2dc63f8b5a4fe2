use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {field}: {reason}")]
    Config { field: String, reason: String },

    #[error("parse error in {file}: field `{field}`: {reason}")]
    Parse {
        file: PathBuf,
        field: String,
        reason: String,
    },

    #[error("dimension mismatch{}: {reason}", sample.as_deref().map(|s| format!(" in sample `{s}`")).unwrap_or_default())]
    Dimension {
        sample: Option<String>,
        reason: String,
    },

    #[error("label {label} out of range for {n_classes} classes")]
    Label { label: usize, n_classes: usize },

    #[error("masking failed: {0}")]
    Masking(String),

    #[error("stratification failed: class {class} has {count} samples, need at least {k_folds}")]
    Stratification {
        class: usize,
        count: usize,
        k_folds: usize,
    },

    #[error("empty bag")]
    EmptyBag,

    #[error("empty batch")]
    EmptyBatch,

    #[error("degenerate clustering: {distinct} distinct points for {requested} clusters")]
    DegenerateClustering { distinct: usize, requested: usize },

    #[error("numerical failure at iteration {iteration}: {reason}")]
    Numerical { iteration: usize, reason: String },

    #[error("state error: {0}")]
    State(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch}: {breakdown}")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        breakdown: String,
    },

    #[error("fold {fold}: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by user input rather than runtime failure.
    pub fn is_user_error(&self) -> bool {
        match self {
            Error::Config { .. }
            | Error::Parse { .. }
            | Error::Dimension { .. }
            | Error::Label { .. }
            | Error::Stratification { .. }
            | Error::Masking(_) => true,
            Error::Fold { source, .. } => source.is_user_error(),
            _ => false,
        }
    }
}
