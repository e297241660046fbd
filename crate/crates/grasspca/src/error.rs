use std::fmt;
use std::path::{Path, PathBuf};

use serde::Serialize;

/// One offending configuration field.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct FieldIssue {
    pub field: String,
    pub reason: String,
}

/// Every problem found while validating a configuration.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ValidationError {
    pub issues: Vec<FieldIssue>,
}

impl ValidationError {
    pub fn fields(&self) -> Vec<&str> {
        self.issues.iter().map(|i| i.field.as_str()).collect()
    }
}

impl fmt::Display for ValidationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid configuration:")?;
        for issue in &self.issues {
            write!(f, " `{}` {};", issue.field, issue.reason)?;
        }
        Ok(())
    }
}

impl std::error::Error for ValidationError {}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("file not found: {}", .0.display())]
    MissingFile(PathBuf),
    #[error("{}: {detail}", path.display())]
    HeaderMismatch { path: PathBuf, detail: String },
    #[error("{}: no usable rows after filtering", .0.display())]
    EmptyAfterFiltering(PathBuf),
    #[error("{}:{line}: {detail}", path.display())]
    Parse { path: PathBuf, line: usize, detail: String },
    #[error(transparent)]
    Validation(#[from] ValidationError),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("the evaluation set contains a single class; anomaly metrics need labeled normals and anomalies (check the label column and the holdout fraction)")]
    SingleClass,
    #[error("lagrangian increased by {increase:e} at round {round} (tolerance {tolerance:e})")]
    NotMonotone {
        round: usize,
        increase: f64,
        tolerance: f64,
    },
    #[error(transparent)]
    Core(grasspca_core::Error),
    #[error("{0}")]
    Json(#[from] serde_json::Error),
}

impl From<grasspca_core::Error> for CliError {
    fn from(e: grasspca_core::Error) -> Self {
        let mut inner = &e;
        while let grasspca_core::Error::Client { source, .. } = inner {
            inner = source;
        }
        match inner {
            grasspca_core::Error::SingleClass => CliError::SingleClass,
            _ => CliError::Core(e),
        }
    }
}

impl CliError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub(crate) fn header(path: &Path, detail: String) -> Self {
        CliError::HeaderMismatch {
            path: path.to_path_buf(),
            detail,
        }
    }

    /// Short machine-readable category.
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::MissingFile(_) => "missing_file",
            CliError::HeaderMismatch { .. } => "header_mismatch",
            CliError::EmptyAfterFiltering(_) => "empty_after_filtering",
            CliError::Parse { .. } => "parse_error",
            CliError::Validation(_) => "validation_error",
            CliError::Io { .. } => "io_error",
            CliError::SingleClass => "single_class",
            CliError::NotMonotone { .. } => "not_monotone",
            CliError::Core(_) => "pipeline_error",
            CliError::Json(_) => "json_error",
        }
    }

    /// Process exit status for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            _ => 1,
        }
    }

    /// `{"error": kind, "message": …}` plus the field list for validation
    /// failures.
    pub fn to_json(&self) -> serde_json::Value {
        let mut v = serde_json::json!({ "error": self.kind(), "message": self.to_string() });
        if let CliError::Validation(e) = self {
            v["issues"] = serde_json::to_value(&e.issues).unwrap_or_default();
        }
        v
    }
}
