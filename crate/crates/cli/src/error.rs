use std::fmt;

/// Failure classes with fixed process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Other,
    MissingFile,
    Validation,
    Numerical,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            Self::Other => 1,
            Self::MissingFile => 2,
            Self::Validation => 3,
            Self::Numerical => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Other => "other",
            Self::MissingFile => "missing_file",
            Self::Validation => "validation",
            Self::Numerical => "numerical",
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub kind: ErrorKind,
    pub message: String,
}

impl CliError {
    pub fn new(kind: ErrorKind, message: impl Into<String>) -> Self {
        Self { kind, message: message.into() }
    }

    pub fn validation(message: impl Into<String>) -> Self {
        Self::new(ErrorKind::Validation, message)
    }

    pub fn missing(path: &std::path::Path) -> Self {
        Self::new(ErrorKind::MissingFile, format!("{} does not exist", path.display()))
    }

    /// Single-line JSON record for stderr.
    pub fn to_line(&self) -> String {
        serde_json::json!({ "error": self.kind.name(), "code": self.kind.exit_code(), "message": self.message })
            .to_string()
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.kind.name(), self.message)
    }
}

impl std::error::Error for CliError {}

impl From<safeocc::Error> for CliError {
    fn from(e: safeocc::Error) -> Self {
        use safeocc::Error as E;
        let kind = match &e {
            E::Io(io) if io.kind() == std::io::ErrorKind::NotFound => ErrorKind::MissingFile,
            E::Io(_) => ErrorKind::Other,
            E::Numerical(_) => ErrorKind::Numerical,
            E::Dimension(_) | E::InvalidArgument(_) | E::InsufficientData(_) | E::Format(_) | E::Json(_) => {
                ErrorKind::Validation
            }
        };
        Self::new(kind, e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        safeocc::Error::Io(e).into()
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self::validation(e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
