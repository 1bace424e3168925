use std::path::PathBuf;

pub type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("missing {what} at {}: run {command} first", path.display())]
    MissingArtifact {
        what: &'static str,
        path: PathBuf,
        command: &'static str,
    },

    #[error("{}: {source}", path.display())]
    Artifact {
        path: PathBuf,
        #[source]
        source: cohallo_core::Error,
    },

    #[error(transparent)]
    Core(#[from] cohallo_core::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl CliError {
    /// Bad input or configuration exits with 2, failures while running with 1.
    pub fn exit_code(&self) -> i32 {
        let validation = match self {
            CliError::Config(_) | CliError::MissingArtifact { .. } => true,
            CliError::Artifact { source, .. } | CliError::Core(source) => source.is_validation(),
            CliError::Io(_) => false,
        };
        if validation {
            2
        } else {
            1
        }
    }
}
