use std::fmt;
use std::path::{Path, PathBuf};
use thiserror::Error;

/// Exit code for success.
pub const EXIT_OK: i32 = 0;
/// Invalid configuration or command-line usage.
pub const EXIT_CONFIG: i32 = 2;
/// A physics solver failed.
pub const EXIT_SOLVER: i32 = 3;
/// At least one fit did not converge.
pub const EXIT_FIT: i32 = 4;
/// Unreadable or malformed input, or a failed write.
pub const EXIT_IO: i32 = 5;

/// Config problem located by a dotted field path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub path: String,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.path.is_empty() {
            write!(f, "{}", self.message)
        } else {
            write!(f, "{}: {}", self.path, self.message)
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config error: {0}")]
    Config(#[from] ConfigError),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("[{stage}] solver failure: {message}")]
    Solver { stage: String, message: String },
    #[error("fit did not converge for {}: {message}", file.display())]
    FitNonConvergence { file: PathBuf, message: String },
    #[error("{}{}: {message}", file.display(), line.map(|l| format!(":{l}")).unwrap_or_default())]
    Input {
        file: PathBuf,
        line: Option<u64>,
        message: String,
    },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    /// Failure inside one stage of a multi-stage run.
    #[error("[{stage}] {source}")]
    Stage {
        stage: &'static str,
        source: Box<PipelineError>,
    },
}

impl PipelineError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn solver(stage: &str, message: impl fmt::Display) -> Self {
        Self::Solver {
            stage: stage.to_string(),
            message: message.to_string(),
        }
    }

    pub fn input(file: &Path, line: Option<u64>, message: impl fmt::Display) -> Self {
        Self::Input {
            file: file.to_path_buf(),
            line,
            message: message.to_string(),
        }
    }

    pub fn in_stage(self, stage: &'static str) -> Self {
        Self::Stage {
            stage,
            source: Box::new(self),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) | Self::Usage(_) => EXIT_CONFIG,
            Self::Solver { .. } => EXIT_SOLVER,
            Self::FitNonConvergence { .. } => EXIT_FIT,
            Self::Input { .. } | Self::Io { .. } => EXIT_IO,
            Self::Stage { source, .. } => source.exit_code(),
        }
    }
}

pub type Result<T, E = PipelineError> = std::result::Result<T, E>;
