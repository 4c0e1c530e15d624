use epic_core::Error as CoreError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("I/O error: {0}")]
    Io(String),
    #[error("no data: {0}")]
    NoData(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("checkpoint does not match the configured model: {0}")]
    Fingerprint(String),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::NoData(_) => 4,
            CliError::Numeric(_) => 5,
            CliError::Fingerprint(_) => 6,
            CliError::Other(_) => 1,
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        let msg = e.to_string();
        match e {
            CoreError::InvalidConfig(_)
            | CoreError::InvalidSpec(_)
            | CoreError::UnknownLabel { .. }
            | CoreError::SequenceTooLong { .. }
            | CoreError::Parse { .. }
            | CoreError::SpecInfeasible(_) => CliError::Config(msg),
            CoreError::Io(_) | CoreError::Checkpoint(_) => CliError::Io(msg),
            CoreError::NoData(_) | CoreError::EmptyDataset | CoreError::EmptyTestSet => CliError::NoData(msg),
            CoreError::NonFinite(_) => CliError::Numeric(msg),
            _ => CliError::Other(msg),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
