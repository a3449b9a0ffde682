use roughness_core::Error;

/// Failures of a command. Certification failures are not errors; they show
/// up in the report.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    /// A command that needs a certificate was asked to run without one.
    #[error("{0}")]
    Refused(String),
    #[error(transparent)]
    Numerical(#[from] Error),
    #[error("cannot write {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) | CliError::Refused(_) => 2,
            CliError::Numerical(
                Error::Shape(_) | Error::Validation(_) | Error::NotHyperbolic { .. } | Error::InvalidInitialData { .. },
            ) => 2,
            CliError::Numerical(_) | CliError::Io { .. } => 3,
        }
    }

    /// Short machine-readable class for diagnostics.
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Validation(_) => "validation",
            CliError::Refused(_) => "refused",
            CliError::Numerical(Error::NotHyperbolic { .. }) => "not_hyperbolic",
            CliError::Numerical(Error::Shape(_) | Error::Validation(_)) => "validation",
            CliError::Numerical(_) => "numerical",
            CliError::Io { .. } => "io",
        }
    }
}
