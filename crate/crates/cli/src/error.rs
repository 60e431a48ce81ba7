use std::path::Path;

use thiserror::Error;
use whilter::datapipe::DataError;
use whilter::evalkit::EvalError;
use whilter::frontend::FrontendError;
use whilter::model::ModelError;

/// Every failure maps to one of two exit codes: 2 for bad configuration,
/// 1 for anything wrong with the data (or I/O) at run time.
#[derive(Error, Debug)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
}

pub type Result<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 1,
        }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Data(format!("{}: {e}", path.display()))
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::Config(m) => CliError::Config(m),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<FrontendError> for CliError {
    fn from(e: FrontendError) -> Self {
        match e {
            FrontendError::Config(m) => CliError::Config(format!("encoder: {m}")),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Config(m) => CliError::Config(m),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Model(m) => m.into(),
            EvalError::Frontend(f) => f.into(),
            EvalError::Data(d) => d.into(),
            other => CliError::Data(other.to_string()),
        }
    }
}
