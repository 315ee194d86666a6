use std::path::{Path, PathBuf};

/// Process exit status for each failure class.
pub mod exit {
    pub const OK: u8 = 0;
    pub const OTHER: u8 = 1;
    pub const CONFIG: u8 = 2;
    pub const DATA: u8 = 3;
    pub const VERIFICATION: u8 = 4;
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] exitnet::Error),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{0} already exists; pass --force to overwrite")]
    Exists(PathBuf),

    #[error("data error: {0}")]
    Data(String),

    #[error("verification failed: {0}")]
    Verification(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.to_path_buf(), source }
    }

    pub fn exit_code(&self) -> u8 {
        use exitnet::Error as E;
        match self {
            CliError::Config(_) | CliError::Exists(_) => exit::CONFIG,
            CliError::Data(_) | CliError::Io { .. } => exit::DATA,
            CliError::Verification(_) => exit::VERIFICATION,
            CliError::Core(e) => match e {
                E::Config(_) | E::Variant { .. } => exit::CONFIG,
                E::Shape { .. } | E::InvalidArgument { .. } | E::Label { .. } | E::EmptyData(_) | E::Corrupt { .. } | E::Io { .. } => {
                    exit::DATA
                }
                E::NonScalarRoot(_) | E::Diverged { .. } => exit::OTHER,
            },
        }
    }
}
