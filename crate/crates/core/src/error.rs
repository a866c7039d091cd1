use thiserror::Error;

/// Errors surfaced by the library.
///
/// Variants are grouped by diagnostic category; the CLI maps each category
/// onto its own exit code.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("illegal evidence {index}: {reason}")]
    IllegalEvidence { index: usize, reason: String },

    #[error("solver budget exceeded: {nodes} nodes > {budget}")]
    Budget { nodes: u128, budget: u128 },

    #[error("missing artifact: {0}")]
    MissingArtifact(String),

    #[error("stale artifact {path}: recorded hash {recorded}, found {found}")]
    StaleArtifact {
        path: String,
        recorded: String,
        found: String,
    },

    #[error("malformed data: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short category name used in CLI diagnostics.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Dimension(_) | Error::NonFinite(_) => "numeric",
            Error::Config(_) | Error::InvalidArgument(_) => "config",
            Error::IllegalEvidence { .. } | Error::Budget { .. } => "game",
            Error::MissingArtifact(_) | Error::StaleArtifact { .. } => "artifact",
            Error::Format(_) | Error::Json(_) => "format",
            Error::Io(_) => "io",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
