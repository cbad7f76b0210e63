use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid config: {}", .0.join("; "))]
    ConfigInvalid(Vec<String>),

    #[error("missing artifact {}", .0.display())]
    MissingArtifact(PathBuf),

    #[error(transparent)]
    Core(#[from] oodgate::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("server: {0}")]
    Server(String),
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::ConfigInvalid(_) => "config_invalid",
            CliError::MissingArtifact(_) => "missing_artifact",
            CliError::Core(_) => "core",
            CliError::Io(_) => "io",
            CliError::Server(_) => "server",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::ConfigInvalid(_) => 2,
            CliError::MissingArtifact(_) => 3,
            _ => 1,
        }
    }
}
