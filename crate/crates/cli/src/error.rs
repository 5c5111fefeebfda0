use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("run failed: {0}")]
    Runtime(String),
    #[error("{0} self-check(s) failed")]
    Selftest(usize),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Runtime(_) => 2,
            CliError::Selftest(_) => 3,
        }
    }
}

impl From<dsbo_core::DsboError> for CliError {
    fn from(e: dsbo_core::DsboError) -> Self {
        use dsbo_core::DsboError as E;
        match e {
            E::Config(_) | E::InvalidParameter(_) | E::InvalidTopology(_) | E::InvalidMatrix(_) => CliError::Config(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
