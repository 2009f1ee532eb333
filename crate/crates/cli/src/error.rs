use thiserror::Error;

/// Exit status for a malformed configuration or input file.
pub const EXIT_MALFORMED: i32 = 2;
/// Exit status for a violated numerical invariant.
pub const EXIT_VIOLATION: i32 = 3;
/// Exit status when a problem exceeds a dimension cap.
pub const EXIT_DIMENSION_CAP: i32 = 4;
/// Exit status for I/O failures on outputs.
pub const EXIT_IO: i32 = 1;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("malformed configuration: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Input { path: String, source: noniid::Error },

    #[error("cannot read {path}: {source}")]
    Read { path: String, source: std::io::Error },

    #[error("cannot write {path}: {source}")]
    Write { path: String, source: std::io::Error },

    #[error(transparent)]
    Core(#[from] noniid::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Read { .. } => EXIT_MALFORMED,
            CliError::Input { source, .. } => match source {
                noniid::Error::DimensionCap { .. } => EXIT_DIMENSION_CAP,
                _ => EXIT_MALFORMED,
            },
            CliError::Write { .. } => EXIT_IO,
            CliError::Core(e) => match e {
                noniid::Error::DimensionCap { .. } => EXIT_DIMENSION_CAP,
                noniid::Error::NumericalViolation(_) => EXIT_VIOLATION,
                _ => EXIT_MALFORMED,
            },
        }
    }
}
