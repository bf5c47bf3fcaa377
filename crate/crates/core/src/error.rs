use thiserror::Error;

/// Errors raised anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum CkscError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate bandwidth: all pairwise distances are zero")]
    DegenerateBandwidth,

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("numeric failure at {context}: {message}")]
    Numeric { context: String, message: String },

    #[error("atom {0} is unused (zero row in the sparse codes)")]
    DeadAtom(usize),

    #[error("integrity mismatch: {0}")]
    Integrity(String),

    #[error("cannot stratify: {0}")]
    Stratification(String),

    #[error("parse error in {file}: {message}")]
    Parse { file: String, message: String },

    #[error("schema error in field `{field}`: {message}")]
    Schema { field: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CkscError {
    pub(crate) fn numeric(context: impl Into<String>, message: impl Into<String>) -> Self {
        CkscError::Numeric { context: context.into(), message: message.into() }
    }

    pub(crate) fn schema(field: impl Into<String>, message: impl Into<String>) -> Self {
        CkscError::Schema { field: field.into(), message: message.into() }
    }
}

pub type Result<T> = std::result::Result<T, CkscError>;
