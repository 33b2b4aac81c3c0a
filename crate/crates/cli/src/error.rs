use situate_core::data_io::DataError;
use situate_core::engine::EngineError;
use situate_core::evaluation::EvalError;
use situate_core::features::FeatureError;
use situate_core::learners::LearnError;
use situate_core::prob_models::ModelError;

pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_IO: i32 = 3;

/// Failure of a subcommand, split by exit code.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CliError {
    /// Inputs are readable but invalid (exit 2).
    #[error("validation: {0}")]
    Validation(String),
    /// Files are missing, unwritable or malformed (exit 3).
    #[error("io: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => EXIT_VALIDATION,
            CliError::Io(_) => EXIT_IO,
        }
    }

    /// Single-line form for standard error.
    pub fn line(&self) -> String {
        format!("error: {self}").replace(['\n', '\r'], " ")
    }

    pub fn io(context: impl std::fmt::Display, e: impl std::fmt::Display) -> Self {
        CliError::Io(format!("{context}: {e}"))
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::Io(m) | DataError::Format(m) => CliError::Io(m),
            DataError::Validation(_) | DataError::Infeasible(_) => CliError::Validation(e.to_string()),
        }
    }
}

impl From<FeatureError> for CliError {
    fn from(e: FeatureError) -> Self {
        match e {
            FeatureError::Io(_) | FeatureError::Format(_) | FeatureError::Truncated { .. } => {
                CliError::Io(e.to_string())
            }
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Document(_) => CliError::Io(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<LearnError> for CliError {
    fn from(e: LearnError) -> Self {
        match e {
            LearnError::Feature(f) => f.into(),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<EngineError> for CliError {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::Document(_) | EngineError::Io(_) => CliError::Io(e.to_string()),
            EngineError::Data(d) => d.into(),
            EngineError::Feature(f) => f.into(),
            EngineError::Model(m) => m.into(),
            EngineError::Learn(l) => l.into(),
            EngineError::Config(_) | EngineError::Training(_) => CliError::Validation(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Engine(x) => x.into(),
            EvalError::Model(x) => x.into(),
            _ => CliError::Validation(e.to_string()),
        }
    }
}
