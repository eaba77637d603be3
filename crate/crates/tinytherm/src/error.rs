use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("malformed file: {0}")]
    Format(String),
    #[error("corrupt file: {0}")]
    Corrupt(String),
    #[error("unsupported {kind} version {found} (this build reads version {supported})")]
    UnsupportedVersion { kind: &'static str, found: u16, supported: u16 },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("usage: {0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] tinytherm_core::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Stable machine-readable name, printed as `error[<category>]`.
    pub fn category(&self) -> &'static str {
        use tinytherm_core::Error as C;
        match self {
            Error::Usage(_) => "usage",
            Error::Io { .. } => "io",
            Error::Format(_) => "format",
            Error::Corrupt(_) => "corrupt",
            Error::UnsupportedVersion { .. } => "unsupported-version",
            Error::Config(_) | Error::Core(C::Config(_)) => "config",
            Error::Core(C::Dimension(_) | C::Arity { .. }) => "dimension",
            Error::Core(C::Validation(_)) => "validation",
            Error::Core(C::Structure(_)) => "structure",
            Error::Core(C::Coverage(_)) => "coverage",
            Error::Core(C::UndefinedMetric(_)) => "metric",
            Error::Core(C::Diverged { .. }) => "diverged",
            Error::Core(C::PruneRefused(_)) => "prune-refused",
            Error::Core(C::Init(_)) => "init",
        }
    }

    /// Process exit code; 2 is shared with argument-parsing failures.
    pub fn exit_code(&self) -> u8 {
        match self.category() {
            "usage" => 2,
            "config" => 3,
            "io" => 4,
            "format" => 5,
            "corrupt" => 6,
            "unsupported-version" => 7,
            "dimension" => 8,
            "validation" => 9,
            "structure" => 10,
            "coverage" => 11,
            "metric" => 12,
            "diverged" => 13,
            "prune-refused" => 14,
            "init" => 15,
            _ => 1,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Format(e.to_string())
    }
}
