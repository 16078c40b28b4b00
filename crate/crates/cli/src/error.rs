//! Error type shared by the subcommands, with the process exit code each maps to.

use std::path::PathBuf;

use relay_esc::EscError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("{0}")]
    Usage(String),

    #[error("{0}")]
    Invalid(#[from] EscError),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub const EXIT_USAGE: i32 = 2;
    pub const EXIT_PARSE: i32 = 3;
    pub const EXIT_INVALID: i32 = 4;
    pub const EXIT_IO: i32 = 5;

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => Self::EXIT_USAGE,
            CliError::Parse { .. } => Self::EXIT_PARSE,
            CliError::Invalid(_) => Self::EXIT_INVALID,
            CliError::Io { .. } => Self::EXIT_IO,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }
}
