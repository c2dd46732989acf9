use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("ParseError at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("ValidationError:\n  {}", .0.join("\n  "))]
    Validation(Vec<String>),

    #[error("{0}")]
    Numerical(cfkalman::Error),

    #[error("verification failed: {0} of {1} probes outside tolerance")]
    VerificationFailed(usize, usize),

    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    /// 1 for bad input, 2 for numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Parse { .. } | CliError::Validation(_) | CliError::Io(_) => 1,
            CliError::Numerical(_) | CliError::VerificationFailed(..) => 2,
        }
    }

    pub fn validation(message: impl Into<String>) -> Self {
        CliError::Validation(vec![message.into()])
    }
}

impl From<cfkalman::Error> for CliError {
    fn from(e: cfkalman::Error) -> Self {
        use cfkalman::Error as E;
        match e {
            E::Dimension(_) | E::Precondition(_) | E::GridMismatch(_) | E::ScheduleOffGrid(_) | E::InvalidStep(_) => {
                CliError::Validation(vec![e.to_string()])
            }
            E::Io(msg) => CliError::Io(msg),
            other => CliError::Numerical(other),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
