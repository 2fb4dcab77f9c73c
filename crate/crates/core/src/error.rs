use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Coarse grouping of errors, used for exit codes and machine-readable output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    InvalidInput,
    Numeric,
    Io,
}

impl ErrorClass {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorClass::InvalidInput => "invalid-input",
            ErrorClass::Numeric => "numeric",
            ErrorClass::Io => "io",
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("field index {index} out of range (system has {m} control fields)")]
    FieldIndex { index: usize, m: usize },

    #[error("non-finite value in {context}")]
    NonFinite { context: &'static str },

    #[error("invalid system: {0}")]
    InvalidSystem(String),

    /// A selection or scenario invariant was violated; `invariant` names it.
    #[error("selection invariant violated ({invariant}): {detail}")]
    SelectionShape {
        invariant: &'static str,
        detail: String,
    },

    #[error("invalid parameter ({invariant}): {detail}")]
    InvalidParameter {
        invariant: &'static str,
        detail: String,
    },

    /// The extension matrix is singular or too ill-conditioned at `state`.
    #[error(
        "rank degeneracy at x = {state:?}: condition number {condition:e} exceeds cap {cap:e}"
    )]
    RankDegeneracy {
        state: Vec<f64>,
        condition: f64,
        cap: f64,
    },

    #[error("trajectory diverged at t = {t}: |x| = {norm:e}")]
    Divergence { t: f64, norm: f64 },

    #[error("unknown scenario '{0}'")]
    UnknownScenario(String),

    #[error("unknown {kind} '{name}' (not in the field library)")]
    UnknownLibraryEntry { kind: &'static str, name: String },

    #[error("scenario parse error: {0}")]
    Parse(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serialize(String),
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::NonFinite { .. } | Error::RankDegeneracy { .. } | Error::Divergence { .. } => {
                ErrorClass::Numeric
            }
            Error::Io { .. } => ErrorClass::Io,
            _ => ErrorClass::InvalidInput,
        }
    }

    /// Short kebab-case tag identifying the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::DimensionMismatch { .. } => "dimension-mismatch",
            Error::FieldIndex { .. } => "field-index",
            Error::NonFinite { .. } => "non-finite",
            Error::InvalidSystem(_) => "invalid-system",
            Error::SelectionShape { .. } => "selection-shape",
            Error::InvalidParameter { .. } => "invalid-parameter",
            Error::RankDegeneracy { .. } => "rank-degeneracy",
            Error::Divergence { .. } => "divergence",
            Error::UnknownScenario(_) => "unknown-scenario",
            Error::UnknownLibraryEntry { .. } => "unknown-library-entry",
            Error::Parse(_) => "parse",
            Error::Io { .. } => "io",
            Error::Serialize(_) => "serialize",
        }
    }

    /// Name of the violated invariant, for shape and parameter errors.
    pub fn invariant(&self) -> Option<&'static str> {
        match self {
            Error::SelectionShape { invariant, .. } | Error::InvalidParameter { invariant, .. } => {
                Some(invariant)
            }
            _ => None,
        }
    }

    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
