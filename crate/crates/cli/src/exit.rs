use std::fmt;
use std::process::ExitCode;

use dcfae::Error;

/// Stable process exit codes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Code {
    Failure = 1,
    Usage = 2,
    Data = 3,
    Numeric = 4,
    Checkpoint = 5,
}

#[derive(Debug)]
pub struct CliError {
    pub code: Code,
    pub error: anyhow::Error,
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

impl CliError {
    pub fn new(code: Code, error: impl Into<anyhow::Error>) -> Self {
        Self {
            code,
            error: error.into(),
        }
    }

    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(self.code as u8)
    }
}

/// Default code for a library error raised outside a more specific stage.
pub fn classify(e: &Error) -> Code {
    match e {
        Error::Config(_) => Code::Usage,
        Error::Numeric { .. } => Code::Numeric,
        Error::CheckpointMismatch(_) => Code::Checkpoint,
        Error::Io { .. }
        | Error::Format(_)
        | Error::Length(_)
        | Error::Consistency(_)
        | Error::EmptyDataset(_)
        | Error::Decode { .. }
        | Error::Csv(_) => Code::Data,
        _ => Code::Failure,
    }
}

pub trait WithCode<T> {
    fn code(self, code: Code) -> Result<T, CliError>;
}

impl<T, E: Into<anyhow::Error>> WithCode<T> for Result<T, E> {
    fn code(self, code: Code) -> Result<T, CliError> {
        self.map_err(|e| CliError::new(code, e))
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::new(classify(&e), e)
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::new(Code::Failure, e)
    }
}
