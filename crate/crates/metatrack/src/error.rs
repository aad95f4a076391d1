use std::fmt;
use std::path::Path;

/// Failure category. Each maps to a stable process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Writing outputs failed.
    Io,
    /// Bad config file, flag value or manifest.
    Config,
    /// Unusable training or tracking input data.
    Data,
    /// Unreadable checkpoint or incompatible dimensions.
    Model,
    /// Unreadable evaluation input.
    Eval,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Io => 1,
            ErrorKind::Config => 2,
            ErrorKind::Data => 3,
            ErrorKind::Model => 4,
            ErrorKind::Eval => 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub kind: ErrorKind,
    pub message: String,
}

impl CliError {
    pub fn new(kind: ErrorKind, message: impl fmt::Display) -> Self {
        Self { kind, message: message.to_string() }
    }

    pub fn config(message: impl fmt::Display) -> Self {
        Self::new(ErrorKind::Config, message)
    }

    pub fn data(message: impl fmt::Display) -> Self {
        Self::new(ErrorKind::Data, message)
    }

    pub fn model(message: impl fmt::Display) -> Self {
        Self::new(ErrorKind::Model, message)
    }

    pub fn eval(message: impl fmt::Display) -> Self {
        Self::new(ErrorKind::Eval, message)
    }

    pub fn exit_code(&self) -> i32 {
        self.kind.exit_code()
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

/// Read a whole file, reporting failures as `kind` with the path attached.
pub fn read_file(path: &Path, kind: ErrorKind) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::new(kind, format!("{}: {e}", path.display())))
}

pub fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::new(ErrorKind::Io, format!("{}: {e}", dir.display())))?;
    }
    std::fs::write(path, contents).map_err(|e| CliError::new(ErrorKind::Io, format!("{}: {e}", path.display())))
}
