use thiserror::Error;

/// Errors raised by model construction, regression, certification and I/O.
#[derive(Debug, Error)]
pub enum KcfError {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("{what} is not full row rank (condition number {cond:.3e} exceeds {limit:.1e})")]
    RankDeficient {
        what: &'static str,
        cond: f64,
        limit: f64,
    },

    #[error("eigensolver failed: {0}")]
    Eigen(String),

    #[error("non-finite value at step {step}: {context}")]
    NonFinite { step: usize, context: String },

    #[error("trajectory left the guard box at step {step}")]
    GuardBox { step: usize },

    #[error("training diverged at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },

    #[error("invalid {what}: {reason}")]
    Invalid { what: &'static str, reason: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl KcfError {
    pub fn invalid(what: &'static str, reason: impl Into<String>) -> Self {
        KcfError::Invalid {
            what,
            reason: reason.into(),
        }
    }

    pub fn dim(context: &'static str, expected: usize, actual: usize) -> Self {
        KcfError::Dimension {
            context,
            expected,
            actual,
        }
    }

    /// Coarse category used by front ends to pick exit codes.
    pub fn category(&self) -> ErrorCategory {
        match self {
            KcfError::Dimension { .. } | KcfError::Invalid { .. } => ErrorCategory::Validation,
            KcfError::RankDeficient { .. }
            | KcfError::Eigen(_)
            | KcfError::NonFinite { .. }
            | KcfError::GuardBox { .. }
            | KcfError::Diverged { .. } => ErrorCategory::Numerical,
            KcfError::Io { .. } => ErrorCategory::Io,
            KcfError::Json(e) if e.is_io() => ErrorCategory::Io,
            KcfError::Csv(e) if matches!(e.kind(), csv::ErrorKind::Io(_)) => ErrorCategory::Io,
            KcfError::Json(_) | KcfError::Csv(_) => ErrorCategory::Validation,
        }
    }

    /// Stable machine-readable variant name.
    pub fn kind(&self) -> &'static str {
        match self {
            KcfError::Dimension { .. } => "dimension",
            KcfError::RankDeficient { .. } => "rank_deficient",
            KcfError::Eigen(_) => "eigen",
            KcfError::NonFinite { .. } => "non_finite",
            KcfError::GuardBox { .. } => "guard_box",
            KcfError::Diverged { .. } => "diverged",
            KcfError::Invalid { .. } => "invalid",
            KcfError::Io { .. } => "io",
            KcfError::Json(_) => "json",
            KcfError::Csv(_) => "csv",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Validation,
    Numerical,
    Io,
}

pub type Result<T> = std::result::Result<T, KcfError>;
