use avsd_core::Error as CoreError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    /// Short stable code printed as `error[code]: ...`.
    pub fn code(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Config(_) => "config",
            CliError::Io(_) => "io",
            CliError::Core(e) => match e {
                CoreError::Config(_) | CoreError::Capacity(_) => "config",
                CoreError::Io(_) => "io",
                CoreError::Format(_) => "format",
                CoreError::Malformed { .. } | CoreError::MissingFeatures { .. } => "data",
                CoreError::Alignment(_) => "alignment",
                CoreError::Numerical(_) => "numerical",
                _ => "internal",
            },
        }
    }

    /// Process exit status for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }

    /// The single-line report printed to stderr.
    pub fn report(&self) -> String {
        let msg = self.to_string().replace('\n', " ");
        format!("error[{}]: {}", self.code(), msg)
    }
}

pub type CliResult<T> = Result<T, CliError>;
