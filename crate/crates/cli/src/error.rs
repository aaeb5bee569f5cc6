use qsb_core::QsbError;
use thiserror::Error;

/// Failures of a `qsb` invocation, each mapped to a stable exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad config, bad input file or invalid arguments.
    #[error("{0}")]
    Config(String),
    #[error("MissingSolve: {0}")]
    MissingSolve(String),
    #[error("{0}")]
    NotConverged(QsbError),
    #[error("{0}")]
    Numerics(QsbError),
    #[error("{context}: {source}")]
    Io { context: String, source: std::io::Error },
    /// Some verify checks failed; the report has been printed.
    #[error("{0} verification check(s) failed")]
    VerifyFailed(usize),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::MissingSolve(_) => 2,
            CliError::NotConverged(_) => 3,
            CliError::Numerics(e) => match e {
                QsbError::NotConverged { .. } => 3,
                // Anything else reaching here came from user-supplied values.
                _ => 2,
            },
            CliError::Io { .. } | CliError::VerifyFailed(_) => 1,
        }
    }

    pub fn io(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> CliError {
        let context = context.into();
        move |source| CliError::Io { context, source }
    }
}

impl From<QsbError> for CliError {
    fn from(e: QsbError) -> Self {
        CliError::Numerics(e)
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        match e.into_kind() {
            csv::ErrorKind::Io(source) => CliError::Io { context: "csv".into(), source },
            other => CliError::Config(format!("csv: {other:?}")),
        }
    }
}
