use std::path::PathBuf;

/// Errors produced anywhere in the workflow.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite values in {0}")]
    NonFinite(String),

    #[error("factorization failed: {0}")]
    Factorization(String),

    #[error(
        "rejection sampling exhausted: accepted {accepted} of {requested} after {attempts} attempts \
         (acceptance rate {rate:.3e})"
    )]
    SamplingExhausted {
        requested: usize,
        accepted: usize,
        attempts: usize,
        rate: f64,
    },

    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    TrainingDiverged { epoch: usize, loss: f64 },

    #[error("reduced model diverged at step {step}")]
    RolloutDiverged { step: usize },

    #[error("reference output {index} has zero norm")]
    ZeroNormReference { index: usize },

    #[error("candidate pool exhausted: requested {requested}, only {remaining} unselected")]
    PoolExhausted { requested: usize, remaining: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("missing artifact(s): {}", .0.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(", "))]
    MissingArtifact(Vec<PathBuf>),

    #[error("corrupt artifact {path}: {reason}")]
    CorruptArtifact { path: PathBuf, reason: String },

    #[error("artifacts were produced by different configurations ({left} vs {right})")]
    ConfigMismatch { left: String, right: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn dim(context: &'static str, expected: usize, actual: usize) -> Self {
        Error::DimensionMismatch {
            context,
            expected,
            actual,
        }
    }

    /// Broad category, used by the CLI to pick an exit code.
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) | Error::InvalidArgument(_) | Error::ConfigMismatch { .. } => {
                ErrorKind::Config
            }
            Error::MissingArtifact(_) => ErrorKind::MissingArtifact,
            Error::Io(e) if e.kind() == std::io::ErrorKind::NotFound => ErrorKind::MissingArtifact,
            Error::Io(_) | Error::Json(_) | Error::CorruptArtifact { .. } => ErrorKind::Artifact,
            _ => ErrorKind::Numerical,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Numerical,
    MissingArtifact,
    Artifact,
}
