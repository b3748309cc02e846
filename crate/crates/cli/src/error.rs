use std::path::Path;

use popk::corpus::CorpusError;
use popk::eval::EvalError;
use popk::model::ModelError;
use popk::sampler::SamplerError;
use popk::synth::SynthError;
use thiserror::Error;

/// Exit code 1 for invalid configurations and degenerate evaluations,
/// 2 for unreadable or malformed inputs.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Parse(String),
}

impl CliError {
    pub fn io(path: &Path, err: std::io::Error) -> Self {
        CliError::Io(format!("{}: {err}", path.display()))
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Io(_) | CliError::Parse(_) => 2,
        }
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        match e {
            CorpusError::Io { .. } => CliError::Io(e.to_string()),
            CorpusError::InvalidBucketLength => CliError::Validation(e.to_string()),
            _ => CliError::Parse(e.to_string()),
        }
    }
}

macro_rules! validation {
    ($($t:ty),*) => {
        $(impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Validation(e.to_string())
            }
        })*
    };
}

validation!(EvalError, SamplerError, SynthError);

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Checkpoint(_) => CliError::Parse(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}
