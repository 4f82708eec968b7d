use std::io;
use std::path::{Path, PathBuf};

use mmtlab_core::Error as CoreError;

pub type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),

    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },

    #[error("{0}")]
    Input(String),

    #[error(transparent)]
    Core(#[from] CoreError),
}

impl CliError {
    pub fn io(path: &Path, source: io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// Short machine-readable category, the second field of the error line.
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Io { .. } => "io",
            CliError::Input(_) => "input",
            CliError::Core(e) => match e {
                CoreError::ShapeMismatch { .. } | CoreError::InvalidArgument { .. } => "internal",
                CoreError::Config(_) => "config",
                CoreError::NonFiniteGradient(_) => "numeric",
                CoreError::GradCheck(_) => "gradcheck",
                CoreError::Checkpoint(_) => "checkpoint",
                CoreError::Vocabulary(_) => "vocabulary",
                CoreError::Encoding { .. } => "encoding",
                CoreError::Corpus(_) => "corpus",
                CoreError::Bpe(_) => "bpe",
                CoreError::Decode(_) => "decode",
                CoreError::Metric(_) => "metric",
                CoreError::Visual(_) => "visual",
                CoreError::Io(_) => "io",
                CoreError::Json(_) => "json",
            },
        }
    }

    /// `error: <kind>: <message>` on a single line.
    pub fn line(&self) -> String {
        let kind = self.kind();
        let msg = self.to_string();
        let msg = msg.strip_prefix(&format!("{kind}: ")).unwrap_or(&msg);
        let msg: Vec<&str> = msg.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
        format!("error: {kind}: {}", msg.join("; "))
    }
}
